//! File formats.
//!
//! Everything on disk is either CSV with a leading schema line or JSON with a
//! schema field, so formats can evolve without ambiguity:
//!
//! - spectrogram CSV: `schema,spectrogram_v1`, then `F,T,hop_s,bins_per_octave`,
//!   then `F` rows of `T` comma-separated values (9 significant digits);
//! - templates CSV: `schema,templates_v1`, then `n_pitches,n_modes,n_bins`,
//!   then the shift range, then one row per (pitch, mode) in pitch-major order;
//! - prior CSV: `schema,prior_matrix_v1`, then `N_I,kind`, then `N_I` rows;
//! - spectra CSV: `schema,spectra_v1`, then `n_rows,n_bins`, then the rows;
//! - activity CSV: `schema,activity_v1`, then `n_pitches,n_frames,hop_s`;
//! - note events: a JSON array of `{pitch, onset_s, offset_s}` (1-based
//!   pitches), or a CSV piano roll with the same columns;
//! - scenarios: JSON with a `schema: "scenario_v1"` field.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TemplateDictionary;
use crate::priors::{PriorKind, PriorMatrix};
use crate::spectrogram::Spectrogram;
use crate::synth::{SyntheticScenario, TemplateGen};
use crate::transcription::NoteEvent;

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

fn expect_schema(path: &Path, lines: &[String], schema: &str) -> Result<()> {
    let expected = format!("schema,{schema}");
    match lines.first() {
        Some(line) if line.trim() == expected => Ok(()),
        Some(line) => Err(parse_err(
            path,
            1,
            format!("expected header '{expected}', found '{line}'"),
        )),
        None => Err(parse_err(path, 1, "empty file")),
    }
}

fn parse_fields<'a>(
    path: &Path,
    line_no: usize,
    line: &'a str,
    expected: usize,
) -> Result<Vec<&'a str>> {
    let fields: Vec<&str> = line.split(',').map(|f| f.trim()).collect();
    if fields.len() != expected {
        return Err(parse_err(
            path,
            line_no,
            format!("expected {expected} comma-separated fields, found {}", fields.len()),
        ));
    }
    Ok(fields)
}

fn parse_num<T: std::str::FromStr>(path: &Path, line_no: usize, field: &str) -> Result<T> {
    field
        .parse::<T>()
        .map_err(|_| parse_err(path, line_no, format!("cannot parse '{field}'")))
}

fn parse_row(path: &Path, line_no: usize, line: &str, expected: usize) -> Result<Vec<f64>> {
    let fields = parse_fields(path, line_no, line, expected)?;
    fields
        .iter()
        .map(|f| parse_num::<f64>(path, line_no, f))
        .collect()
}

fn fmt_short(v: f64) -> String {
    format!("{v:.8e}")
}

fn fmt_full(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_matrix(out: &mut String, m: &ArrayView2<'_, f64>, fmt: fn(f64) -> String) {
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|&v| fmt(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
}

/// Write a spectrogram CSV (values at 9 significant digits).
pub fn save_spectrogram(spec: &Spectrogram, path: &Path) -> Result<()> {
    let mut out = String::from("schema,spectrogram_v1\n");
    out.push_str(&format!(
        "{},{},{},{}\n",
        spec.n_bins(),
        spec.n_frames(),
        spec.frame_hop_seconds,
        spec.bins_per_octave
    ));
    write_matrix(&mut out, &spec.values.view(), fmt_short);
    fs::write(path, out)?;
    Ok(())
}

/// Load a spectrogram CSV, validating shape and nonnegativity.
pub fn load_spectrogram(path: &Path) -> Result<Spectrogram> {
    let lines = read_lines(path)?;
    expect_schema(path, &lines, "spectrogram_v1")?;
    let header = lines
        .get(1)
        .ok_or_else(|| parse_err(path, 2, "missing dimension header"))?;
    let fields = parse_fields(path, 2, header, 4)?;
    let n_bins: usize = parse_num(path, 2, fields[0])?;
    let n_frames: usize = parse_num(path, 2, fields[1])?;
    let hop_s: f64 = parse_num(path, 2, fields[2])?;
    let bins_per_octave: u32 = parse_num(path, 2, fields[3])?;

    let data_lines: Vec<(usize, &String)> = lines
        .iter()
        .enumerate()
        .skip(2)
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    if data_lines.len() != n_bins {
        let line_no = data_lines.last().map(|(i, _)| i + 1).unwrap_or(2);
        return Err(parse_err(
            path,
            line_no,
            format!("header declares {n_bins} rows but file has {}", data_lines.len()),
        ));
    }
    let mut values = Array2::zeros((n_bins, n_frames));
    for (row, (idx, line)) in data_lines.iter().enumerate() {
        let line_no = idx + 1;
        let parsed = parse_row(path, line_no, line, n_frames)?;
        for (col, v) in parsed.into_iter().enumerate() {
            if v < 0.0 {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("negative value {v} at bin {row}, frame {col}"),
                ));
            }
            values[[row, col]] = v;
        }
    }
    Spectrogram::new(values, hop_s, bins_per_octave)
}

/// Write a template dictionary CSV.
pub fn save_templates(dict: &TemplateDictionary, path: &Path) -> Result<()> {
    let dims = dict.dims();
    let mut out = String::from("schema,templates_v1\n");
    out.push_str(&format!(
        "{},{},{}\n",
        dims.n_pitches,
        dims.n_modes,
        dict.n_bins()
    ));
    let shifts: Vec<String> = dict.shift_range().iter().map(|s| s.to_string()).collect();
    out.push_str(&shifts.join(","));
    out.push('\n');
    for i in 0..dims.n_pitches {
        for m in 0..dims.n_modes {
            let cells: Vec<String> = dict.template(i, m).iter().map(|&v| fmt_full(v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Load a template dictionary CSV.
pub fn load_templates(path: &Path) -> Result<TemplateDictionary> {
    let lines = read_lines(path)?;
    expect_schema(path, &lines, "templates_v1")?;
    let header = lines
        .get(1)
        .ok_or_else(|| parse_err(path, 2, "missing dimension header"))?;
    let fields = parse_fields(path, 2, header, 3)?;
    let n_pitches: usize = parse_num(path, 2, fields[0])?;
    let n_modes: usize = parse_num(path, 2, fields[1])?;
    let n_bins: usize = parse_num(path, 2, fields[2])?;
    let shift_line = lines
        .get(2)
        .ok_or_else(|| parse_err(path, 3, "missing shift range"))?;
    let shift_range: Vec<i64> = shift_line
        .split(',')
        .map(|f| parse_num::<i64>(path, 3, f.trim()))
        .collect::<Result<_>>()?;

    let expected_rows = n_pitches * n_modes;
    let data_lines: Vec<(usize, &String)> = lines
        .iter()
        .enumerate()
        .skip(3)
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    if data_lines.len() != expected_rows {
        return Err(parse_err(
            path,
            data_lines.last().map(|(i, _)| i + 1).unwrap_or(3),
            format!(
                "header declares {expected_rows} template rows but file has {}",
                data_lines.len()
            ),
        ));
    }
    let mut templates = Array3::zeros((n_pitches, n_modes, n_bins));
    for (row, (idx, line)) in data_lines.iter().enumerate() {
        let parsed = parse_row(path, idx + 1, line, n_bins)?;
        let (i, m) = (row / n_modes, row % n_modes);
        for (f, v) in parsed.into_iter().enumerate() {
            templates[[i, m, f]] = v;
        }
    }
    TemplateDictionary::new(templates, shift_range)
}

/// Write a prior matrix CSV (`N_I,kind` header).
pub fn save_prior_matrix(prior: &PriorMatrix, path: &Path) -> Result<()> {
    let mut out = String::from("schema,prior_matrix_v1\n");
    out.push_str(&format!("{},{}\n", prior.n_pitches(), prior.kind.as_str()));
    write_matrix(&mut out, &prior.matrix.view(), fmt_full);
    fs::write(path, out)?;
    Ok(())
}

/// Load a prior matrix CSV.
pub fn load_prior_matrix(path: &Path) -> Result<PriorMatrix> {
    let lines = read_lines(path)?;
    expect_schema(path, &lines, "prior_matrix_v1")?;
    let header = lines
        .get(1)
        .ok_or_else(|| parse_err(path, 2, "missing prior header"))?;
    let fields = parse_fields(path, 2, header, 2)?;
    let n: usize = parse_num(path, 2, fields[0])?;
    let kind = PriorKind::parse(fields[1])
        .ok_or_else(|| parse_err(path, 2, format!("unknown prior kind '{}'", fields[1])))?;
    let data_lines: Vec<(usize, &String)> = lines
        .iter()
        .enumerate()
        .skip(2)
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    if data_lines.len() != n {
        return Err(parse_err(
            path,
            data_lines.last().map(|(i, _)| i + 1).unwrap_or(2),
            format!("header declares {n} rows but file has {}", data_lines.len()),
        ));
    }
    let mut matrix = Array2::zeros((n, n));
    for (row, (idx, line)) in data_lines.iter().enumerate() {
        let parsed = parse_row(path, idx + 1, line, n)?;
        for (col, v) in parsed.into_iter().enumerate() {
            if v < 0.0 {
                return Err(parse_err(
                    path,
                    idx + 1,
                    format!("negative prior entry {v}"),
                ));
            }
            matrix[[row, col]] = v;
        }
    }
    Ok(PriorMatrix { matrix, kind })
}

/// Write per-pitch spectra (`n_rows,n_bins` header), used for resonance
/// prior training inputs.
pub fn save_spectra(spectra: &Array2<f64>, path: &Path) -> Result<()> {
    let mut out = String::from("schema,spectra_v1\n");
    out.push_str(&format!("{},{}\n", spectra.nrows(), spectra.ncols()));
    write_matrix(&mut out, &spectra.view(), fmt_full);
    fs::write(path, out)?;
    Ok(())
}

/// Load per-pitch spectra.
pub fn load_spectra(path: &Path) -> Result<Array2<f64>> {
    let lines = read_lines(path)?;
    expect_schema(path, &lines, "spectra_v1")?;
    let header = lines
        .get(1)
        .ok_or_else(|| parse_err(path, 2, "missing dimension header"))?;
    let fields = parse_fields(path, 2, header, 2)?;
    let n_rows: usize = parse_num(path, 2, fields[0])?;
    let n_bins: usize = parse_num(path, 2, fields[1])?;
    let data_lines: Vec<(usize, &String)> = lines
        .iter()
        .enumerate()
        .skip(2)
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    if data_lines.len() != n_rows {
        return Err(parse_err(
            path,
            data_lines.last().map(|(i, _)| i + 1).unwrap_or(2),
            format!("header declares {n_rows} rows but file has {}", data_lines.len()),
        ));
    }
    let mut spectra = Array2::zeros((n_rows, n_bins));
    for (row, (idx, line)) in data_lines.iter().enumerate() {
        let parsed = parse_row(path, idx + 1, line, n_bins)?;
        for (col, v) in parsed.into_iter().enumerate() {
            spectra[[row, col]] = v;
        }
    }
    Ok(spectra)
}

/// Write an activity matrix CSV.
pub fn save_activity(activity: ArrayView2<'_, f64>, hop_s: f64, path: &Path) -> Result<()> {
    let mut out = String::from("schema,activity_v1\n");
    out.push_str(&format!(
        "{},{},{}\n",
        activity.nrows(),
        activity.ncols(),
        hop_s
    ));
    write_matrix(&mut out, &activity, fmt_short);
    fs::write(path, out)?;
    Ok(())
}

/// Write note events as JSON.
pub fn save_notes_json(notes: &[NoteEvent], path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(notes)?;
    fs::write(path, json)?;
    Ok(())
}

/// Load note events from JSON.
pub fn load_notes_json(path: &Path) -> Result<Vec<NoteEvent>> {
    let text = fs::read_to_string(path)?;
    let notes: Vec<NoteEvent> = serde_json::from_str(&text)?;
    Ok(notes)
}

/// Write note events as a CSV piano roll.
pub fn save_notes_csv(notes: &[NoteEvent], path: &Path) -> Result<()> {
    let mut out = String::from("schema,notes_v1\npitch,onset_s,offset_s\n");
    for n in notes {
        out.push_str(&format!("{},{},{}\n", n.pitch, n.onset_s, n.offset_s));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Where a scenario's template dictionary comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateSource {
    /// Load from a templates CSV.
    Path(String),
    /// Generate from a recipe.
    Generate(TemplateGen),
}

/// A scenario file: the scenario itself plus its dictionary source.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioFile {
    /// Format tag, `scenario_v1`.
    pub schema: String,
    /// The synthetic scenario.
    pub scenario: SyntheticScenario,
    /// Template dictionary source.
    pub templates: TemplateSource,
    /// Shift range for generated dictionaries.
    #[serde(default = "TemplateDictionary::canonical_shift_range")]
    pub shift_range: Vec<i64>,
}

/// Load and validate a scenario JSON file.
pub fn load_scenario(path: &Path) -> Result<ScenarioFile> {
    let text = fs::read_to_string(path)?;
    let file: ScenarioFile = serde_json::from_str(&text)?;
    if file.schema != "scenario_v1" {
        return Err(parse_err(
            path,
            1,
            format!("unsupported scenario schema '{}'", file.schema),
        ));
    }
    Ok(file)
}

/// Resolve a scenario's template source relative to the scenario file.
pub fn resolve_templates(file: &ScenarioFile, scenario_path: &Path) -> Result<TemplateDictionary> {
    match &file.templates {
        TemplateSource::Path(p) => {
            let base = scenario_path.parent().unwrap_or_else(|| Path::new("."));
            load_templates(&base.join(p))
        }
        TemplateSource::Generate(gen) => {
            crate::synth::generate_dictionary(gen, file.shift_range.clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_dictionary;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn tempdir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn spectrogram_round_trip_is_bit_exact_at_nine_digits() {
        let dir = tempdir();
        let path = dir.path().join("spec.csv");
        // Values authored at <= 9 significant digits.
        let values = array![[0.123456789, 2.0], [0.5, 0.000000001], [1e3, 0.25]];
        let spec = Spectrogram::new(values, 0.0115, 60).unwrap();
        save_spectrogram(&spec, &path).unwrap();
        let loaded = load_spectrogram(&path).unwrap();
        assert_eq!(loaded.values, spec.values);
        assert_eq!(loaded.frame_hop_seconds, spec.frame_hop_seconds);
        assert_eq!(loaded.bins_per_octave, 60);
        // Saving the loaded copy reproduces the file byte for byte.
        let path2 = dir.path().join("spec2.csv");
        save_spectrogram(&loaded, &path2).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            std::fs::read_to_string(&path2).unwrap()
        );
    }

    #[test]
    fn spectrogram_row_count_mismatch_names_both() {
        let dir = tempdir();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "schema,spectrogram_v1\n3,2,0.01,60\n1,2\n3,4\n",
        )
        .unwrap();
        let err = load_spectrogram(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('3') && msg.contains('2'), "message: {msg}");
    }

    #[test]
    fn spectrogram_negative_value_names_line() {
        let dir = tempdir();
        let path = dir.path().join("neg.csv");
        std::fs::write(
            &path,
            "schema,spectrogram_v1\n2,2,0.01,60\n1,2\n-3,4\n",
        )
        .unwrap();
        match load_spectrogram(&path).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 4);
                assert!(message.contains("-3"));
            }
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn spectrogram_ragged_row_is_rejected() {
        let dir = tempdir();
        let path = dir.path().join("ragged.csv");
        std::fs::write(
            &path,
            "schema,spectrogram_v1\n2,3,0.01,60\n1,2,3\n4,5\n",
        )
        .unwrap();
        match load_spectrogram(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn authored_fixture_loads_to_known_matrix() {
        let dir = tempdir();
        let path = dir.path().join("fixture.csv");
        let mut body = String::from("schema,spectrogram_v1\n8,4,0.01,60\n");
        for f in 0..8 {
            let row: Vec<String> =
                (0..4).map(|t| format!("{}", (f * 4 + t) as f64 * 0.5)).collect();
            body.push_str(&row.join(","));
            body.push('\n');
        }
        std::fs::write(&path, body).unwrap();
        let spec = load_spectrogram(&path).unwrap();
        assert_eq!(spec.n_bins(), 8);
        assert_eq!(spec.n_frames(), 4);
        assert_abs_diff_eq!(spec.values[[7, 3]], 15.5, epsilon = 1e-12);
        assert_abs_diff_eq!(spec.values[[2, 1]], 4.5, epsilon = 1e-12);
    }

    #[test]
    fn templates_round_trip() {
        let dir = tempdir();
        let path = dir.path().join("templates.csv");
        let dict = generate_dictionary(
            &crate::synth::TemplateGen::Disjoint {
                n_pitches: 3,
                block_bins: 8,
            },
            vec![-2, -1, 0, 1, 2],
        )
        .unwrap();
        save_templates(&dict, &path).unwrap();
        let loaded = load_templates(&path).unwrap();
        assert_eq!(loaded.shift_range(), dict.shift_range());
        assert_eq!(loaded.raw(), dict.raw());
    }

    #[test]
    fn prior_round_trip_preserves_kind() {
        let dir = tempdir();
        let path = dir.path().join("prior.csv");
        let prior = PriorMatrix {
            matrix: array![[0.0, 0.25], [1.0, 0.0]],
            kind: PriorKind::Transition,
        };
        save_prior_matrix(&prior, &path).unwrap();
        let loaded = load_prior_matrix(&path).unwrap();
        assert_eq!(loaded.kind, PriorKind::Transition);
        assert_eq!(loaded.matrix, prior.matrix);
    }

    #[test]
    fn prior_with_unknown_kind_is_rejected() {
        let dir = tempdir();
        let path = dir.path().join("prior.csv");
        std::fs::write(&path, "schema,prior_matrix_v1\n1,sideways\n0\n").unwrap();
        assert!(load_prior_matrix(&path).is_err());
    }

    #[test]
    fn notes_json_round_trip() {
        let dir = tempdir();
        let path = dir.path().join("notes.json");
        let notes = vec![
            NoteEvent {
                pitch: 1,
                onset_s: 0.0,
                offset_s: 0.5,
            },
            NoteEvent {
                pitch: 3,
                onset_s: 0.25,
                offset_s: 0.75,
            },
        ];
        save_notes_json(&notes, &path).unwrap();
        let loaded = load_notes_json(&path).unwrap();
        assert_eq!(loaded, notes);
    }

    #[test]
    fn notes_csv_lists_events() {
        let dir = tempdir();
        let path = dir.path().join("notes.csv");
        let notes = vec![NoteEvent {
            pitch: 2,
            onset_s: 0.1,
            offset_s: 0.3,
        }];
        save_notes_csv(&notes, &path).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        assert!(body.starts_with("schema,notes_v1\npitch,onset_s,offset_s\n"));
        assert!(body.contains("2,0.1,0.3"));
    }

    #[test]
    fn spectra_round_trip() {
        let dir = tempdir();
        let path = dir.path().join("spectra.csv");
        let spectra = array![[1.0, 0.0, 0.0], [0.0, 0.6, 0.8]];
        save_spectra(&spectra, &path).unwrap();
        let loaded = load_spectra(&path).unwrap();
        assert_eq!(loaded, spectra);
    }

    #[test]
    fn scenario_parses_with_generated_templates() {
        let dir = tempdir();
        let path = dir.path().join("scenario.json");
        let body = r#"{
            "schema": "scenario_v1",
            "scenario": {
                "notes": [
                    {"pitch": 1, "onset_s": 0.0, "offset_s": 0.2},
                    {"pitch": 2, "onset_s": 0.1, "offset_s": 0.3, "amplitude": 2.0, "mode": 1, "shift": 1}
                ],
                "hop_seconds": 0.01,
                "bins_per_octave": 60,
                "noise_sigma": 0.02
            },
            "templates": {"generate": {"disjoint": {"n_pitches": 3, "block_bins": 8}}}
        }"#;
        std::fs::write(&path, body).unwrap();
        let file = load_scenario(&path).unwrap();
        assert_eq!(file.scenario.notes.len(), 2);
        assert_eq!(file.scenario.notes[0].amplitude, 1.0);
        assert_eq!(file.scenario.notes[1].shift, 1);
        let dict = resolve_templates(&file, &path).unwrap();
        assert_eq!(dict.dims().n_pitches, 3);
        assert_eq!(dict.shift_range(), &[-2, -1, 0, 1, 2]);
    }

    #[test]
    fn wrong_schema_line_is_rejected() {
        let dir = tempdir();
        let path = dir.path().join("wrong.csv");
        std::fs::write(&path, "schema,activity_v1\n1,1,0.01\n0\n").unwrap();
        assert!(load_spectrogram(&path).is_err());
    }
}
