//! Independent checks of the generator's domain gap: class means fit on
//! normal training frames describe held-out normal frames better than silent
//! ones.

use visemekl::synth::{gen_dataset, Dataset, GenConfig, SpeechType, Utterance};
use visemekl::viseme_map::{Lexicon, NUM_CLASSES};

/// Frame-level (class, feature row) pairs.
fn frames<'a>(utts: impl Iterator<Item = &'a Utterance<f64>>) -> Vec<(usize, Vec<f64>)> {
    let mut out = Vec::new();
    for u in utts {
        let per = u.frames.rows() / u.labels.len();
        for (l, class) in u.labels.labels().iter().enumerate() {
            for r in l * per..(l + 1) * per {
                out.push((class.id(), u.frames.row(r).to_vec()));
            }
        }
    }
    out
}

fn class_means(samples: &[(usize, Vec<f64>)]) -> Vec<Option<Vec<f64>>> {
    let d = samples[0].1.len();
    let mut sums = vec![vec![0.0; d]; NUM_CLASSES];
    let mut counts = vec![0usize; NUM_CLASSES];
    for (c, x) in samples {
        counts[*c] += 1;
        sums[*c].iter_mut().zip(x).for_each(|(s, v)| *s += v);
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, n)| (n > 0).then(|| s.into_iter().map(|v| v / n as f64).collect()))
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn mean_distance(samples: &[(usize, Vec<f64>)], protos: &[Option<Vec<f64>>]) -> f64 {
    samples.iter().map(|(c, x)| dist(x, protos[*c].as_ref().unwrap())).sum::<f64>() / samples.len() as f64
}

fn nearest_accuracy(samples: &[(usize, Vec<f64>)], protos: &[Option<Vec<f64>>]) -> f64 {
    let hits = samples
        .iter()
        .filter(|(c, x)| {
            let best = protos
                .iter()
                .enumerate()
                .filter_map(|(k, p)| p.as_ref().map(|p| (k, dist(x, p))))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0;
            best == *c
        })
        .count();
    hits as f64 / samples.len() as f64
}

struct Split {
    protos: Vec<Option<Vec<f64>>>,
    normal: Vec<(usize, Vec<f64>)>,
    silent: Vec<(usize, Vec<f64>)>,
}

fn split(seed: u64) -> Split {
    let ds = gen_dataset::<f64>(&GenConfig { seed, ..GenConfig::default() }, &Lexicon::bundled()).unwrap();
    let protos = class_means(&frames(Dataset::split_by_type(&ds.train, SpeechType::Normal).into_iter()));
    Split {
        protos,
        normal: frames(Dataset::split_by_type(&ds.test, SpeechType::Normal).into_iter()),
        silent: frames(Dataset::split_by_type(&ds.test, SpeechType::Silent).into_iter()),
    }
}

#[test]
fn nearest_prototype_scores_worse_on_silent() {
    let s = split(0);
    let normal = nearest_accuracy(&s.normal, &s.protos);
    let silent = nearest_accuracy(&s.silent, &s.protos);
    assert!(silent < normal, "silent {silent} vs normal {normal}");
}

#[test]
fn silent_frames_sit_farther_from_normal_prototypes() {
    let mut ratio = 0.0;
    for seed in 0..5 {
        let s = split(seed);
        ratio += mean_distance(&s.silent, &s.protos) / mean_distance(&s.normal, &s.protos);
    }
    ratio /= 5.0;
    assert!(ratio >= 1.2, "mean distance ratio {ratio}");
}
