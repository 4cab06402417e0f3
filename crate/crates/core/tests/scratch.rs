//! Scratch experiments (deleted before finalizing).

use ndarray::Array2;
use siplca::em::{em_estimate, EmConfig, EmInit};
use siplca::engine::{filter, FilterConfig, GammaShapes};
use siplca::rng::{domain, stream};
use siplca::synth::{generate_dictionary, synthesize, ScenarioNote, SyntheticScenario, TemplateGen};
use siplca::transcription::{evaluate, extract_notes, NoteEvent};
use siplca::{NormalizedSpectrogram, TemplateDictionary};

fn harmonic(decay: f64) -> TemplateDictionary {
    generate_dictionary(
        &TemplateGen::Harmonic {
            n_pitches: 6,
            n_bins: 100,
            bins_per_octave: 20,
            base_bin: 6,
            spacing_bins: 10,
            n_partials: 4,
            decay,
            floor: 1e-6,
        },
        vec![-2, -1, 0, 1, 2],
    )
    .unwrap()
}

/// Chords with 50 ms silence gaps between them.
fn chord_scenario(noise: f64, chord_ms: f64, gap_ms: f64) -> SyntheticScenario {
    let chords: Vec<Vec<usize>> = vec![
        vec![1, 3],
        vec![2, 4],
        vec![3, 5],
        vec![4, 6],
        vec![1, 3, 5],
        vec![2, 4, 6],
        vec![1, 4],
        vec![2, 5],
        vec![3, 6],
        vec![2, 4, 6],
    ];
    let step = (chord_ms + gap_ms) / 1000.0;
    let dur = chord_ms / 1000.0;
    let mut notes = Vec::new();
    for (k, chord) in chords.iter().enumerate() {
        let onset = k as f64 * step;
        for &p in chord {
            notes.push(ScenarioNote {
                pitch: p,
                onset_s: onset,
                offset_s: onset + dur,
                amplitude: 1.0,
                mode: 1,
                shift: 0,
            });
        }
    }
    SyntheticScenario {
        notes,
        hop_seconds: 0.01,
        bins_per_octave: 20,
        noise_sigma: noise,
        duration_s: None,
    }
}

fn f_of(activity: &Array2<f64>, truth: &[NoteEvent], rel: f64, min_dur: f64) -> f64 {
    let max = activity.iter().cloned().fold(0.0f64, f64::max);
    let notes = extract_notes(activity.view(), 0.01, rel * max, min_dur);
    evaluate(&notes, truth, 0.05).unwrap().f_measure
}

fn stats(fs: &[f64]) -> (f64, f64) {
    let mean = fs.iter().sum::<f64>() / fs.len() as f64;
    let sd = (fs.iter().map(|f| (f - mean) * (f - mean)).sum::<f64>() / (fs.len() - 1) as f64)
        .sqrt();
    (mean, sd)
}

fn pf_cfg(n: usize, sigma: f64, theta: f64, seed: u64) -> FilterConfig {
    FilterConfig {
        n_particles: n,
        sigma,
        gamma_shapes: GammaShapes {
            theta,
            mode: 50.0,
            shift: 50.0,
        },
        seed,
        init_seed: None,
        store_ensembles: false,
        workers: 1,
    }
}

#[test]
fn probe_template_mismatch() {
    for (true_decay, est_decay, noise) in [
        (0.75, 0.55, 0.02),
        (0.75, 0.55, 0.04),
        (0.8, 0.5, 0.02),
        (0.8, 0.5, 0.04),
    ] {
        let dict_true = harmonic(true_decay);
        let dict_est = harmonic(est_decay);
        let sc = chord_scenario(noise, 200.0, 50.0);
        let mut rng = stream(200, domain::SYNTH, 0, 0);
        let out = synthesize(&sc, &dict_true, &mut rng).unwrap();
        let input = siplca::normalize_frames(&out.spectrogram).unwrap();

        let mut efs = Vec::new();
        for seed in 0..8 {
            let eo =
                em_estimate(&input, &dict_est, &EmConfig::em(), EmInit::Random, seed).unwrap();
            efs.push(f_of(&eo.activity, &out.notes, 0.25, 0.08));
        }
        let (em_mean, em_sd) = stats(&efs);
        let mut pfs = Vec::new();
        for seed in 0..5 {
            let cfg = pf_cfg(500, 0.05, 30.0, seed);
            let act = filter(&input, &dict_est, &cfg, None).unwrap().activity;
            pfs.push(f_of(&act, &out.notes, 0.25, 0.08));
        }
        let (pf_mean, pf_sd) = stats(&pfs);
        println!(
            "decay {true_decay}->{est_decay} noise {noise}: EM {em_mean:.3}±{em_sd:.3} PF {pf_mean:.3}±{pf_sd:.3}"
        );
    }
}

#[test]
fn probe_gap_onset_pinning() {
    // Matched templates, gaps, low noise: is PF seed-variance tamed?
    let dict = harmonic(0.6);
    for noise in [0.01, 0.02] {
        let sc = chord_scenario(noise, 200.0, 50.0);
        let mut rng = stream(200, domain::SYNTH, 0, 0);
        let out = synthesize(&sc, &dict, &mut rng).unwrap();
        let input = siplca::normalize_frames(&out.spectrogram).unwrap();
        for (rel, min_dur) in [(0.25, 0.08), (0.35, 0.08)] {
            let mut pfs = Vec::new();
            for seed in 0..8 {
                let cfg = pf_cfg(500, 0.05, 30.0, seed);
                let act = filter(&input, &dict, &cfg, None).unwrap().activity;
                pfs.push(f_of(&act, &out.notes, rel, min_dur));
            }
            let (m, sd) = stats(&pfs);
            println!("gaps noise={noise} rel={rel} PF {m:.3} sd {sd:.4} values {pfs:.3?}");
        }
        let mut efs = Vec::new();
        for seed in 0..8 {
            let eo = em_estimate(&input, &dict, &EmConfig::em(), EmInit::Random, seed).unwrap();
            efs.push(f_of(&eo.activity, &out.notes, 0.25, 0.08));
        }
        let (em, esd) = stats(&efs);
        println!("gaps noise={noise} EM {em:.3} sd {esd:.4}");
    }
}

/// Criterion-6 candidate: shift-trap notes + gaps + low noise.
#[test]
fn probe_trap_with_gaps() {
    let dict = generate_dictionary(
        &TemplateGen::Harmonic {
            n_pitches: 6,
            n_bins: 40,
            bins_per_octave: 30,
            base_bin: 6,
            spacing_bins: 4,
            n_partials: 1,
            decay: 1.0,
            floor: 1e-6,
        },
        vec![-2, -1, 0, 1, 2],
    )
    .unwrap();
    let chords: Vec<Vec<(usize, i64)>> = vec![
        vec![(1, 0), (4, 2)],
        vec![(2, 2), (5, 0)],
        vec![(1, 2), (3, 0)],
        vec![(2, 0), (4, 2)],
        vec![(3, 2), (5, 0)],
        vec![(1, 0), (5, 2)],
        vec![(2, 2), (4, 0)],
        vec![(3, 0), (5, 2)],
    ];
    let mut notes = Vec::new();
    for (k, chord) in chords.iter().enumerate() {
        let onset = k as f64 * 0.3;
        for &(p, s) in chord {
            notes.push(ScenarioNote {
                pitch: p,
                onset_s: onset,
                offset_s: onset + 0.25,
                amplitude: 1.0,
                mode: 1,
                shift: s,
            });
        }
    }
    let sc = SyntheticScenario {
        notes,
        hop_seconds: 0.01,
        bins_per_octave: 30,
        noise_sigma: 0.01,
        duration_s: None,
    };
    let mut rng = stream(300, domain::SYNTH, 0, 0);
    let out = synthesize(&sc, &dict, &mut rng).unwrap();
    let input = siplca::normalize_frames(&out.spectrogram).unwrap();

    let mut efs = Vec::new();
    for seed in 0..12 {
        let eo = em_estimate(&input, &dict, &EmConfig::em(), EmInit::Random, seed).unwrap();
        efs.push(f_of(&eo.activity, &out.notes, 0.25, 0.08));
    }
    let (em, esd) = stats(&efs);
    println!("trap+gaps EM {em:.3} sd {esd:.4} values {efs:.3?}");

    for sigma in [0.05, 0.08] {
        for theta in [30.0, 50.0] {
            let mut pfs = Vec::new();
            for seed in 0..12 {
                let cfg = pf_cfg(500, sigma, theta, seed);
                let act = filter(&input, &dict, &cfg, None).unwrap().activity;
                pfs.push(f_of(&act, &out.notes, 0.25, 0.08));
            }
            let (m, sd) = stats(&pfs);
            println!("trap+gaps PF sigma={sigma} theta={theta} {m:.3} sd {sd:.4} values {pfs:.3?}");
        }
    }
}
