//! The skip-ahead sampler against literal scans of simulated trajectories.

use irrev_core::matching::{search_stream, TimeKind};
use irrev_core::model::{Alphabet, MarkovModel, SymbolStream};
use irrev_core::sampler::{draw_word, PairSampler};
use irrev_core::Outcome;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CAP: u64 = 50_000_000;

fn ks_two_sample(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Two-sample KS critical value at level 0.001.
fn critical(n: usize, m: usize) -> f64 {
    1.95 * ((n + m) as f64 / (n * m) as f64).sqrt()
}

fn ln_found(o: Outcome) -> f64 {
    (o.value().expect("scan censored") as f64).ln()
}

fn scan_waiting(model: &MarkovModel, word: &[u8], rng: &mut ChaCha8Rng) -> (f64, f64) {
    let rev: Vec<u8> = word.iter().rev().copied().collect();
    let stream = SymbolStream::new(model, ChaCha8Rng::seed_from_u64(rng.random()));
    let r = search_stream(stream, &[word, &rev], CAP, TimeKind::Waiting);
    (ln_found(r[0].outcome), ln_found(r[1].outcome))
}

fn scan_return(model: &MarkovModel, word: &[u8], rng: &mut ChaCha8Rng) -> (f64, f64) {
    let rev: Vec<u8> = word.iter().rev().copied().collect();
    let rest = SymbolStream::continuing(model, word, ChaCha8Rng::seed_from_u64(rng.random()));
    let stream = word.iter().copied().chain(rest);
    let r = search_stream(stream, &[word, &rev], CAP, TimeKind::Return);
    (ln_found(r[0].outcome), ln_found(r[1].outcome))
}

fn order_two() -> MarkovModel {
    MarkovModel::new(
        Alphabet::numeric(3).unwrap(),
        2,
        vec![
            0.5, 0.3, 0.2, 0.1, 0.6, 0.3, 0.3, 0.3, 0.4, 0.2, 0.2, 0.6, 0.7, 0.2, 0.1, 0.25, 0.25, 0.5, 0.4,
            0.4, 0.2, 0.1, 0.1, 0.8, 0.3, 0.5, 0.2,
        ],
    )
    .unwrap()
}

#[test]
fn waiting_pair_law_matches_scan_for_fixed_word() {
    let model = MarkovModel::cyclic(0.5, 0.25).unwrap();
    let word = [0u8, 1, 2, 2, 0, 1];
    let mut sampler = PairSampler::new(&model, &word).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m = 3000;
    let (mut sp, mut sm, mut sr) = (vec![], vec![], vec![]);
    let (mut cp, mut cm, mut cr) = (vec![], vec![], vec![]);
    for _ in 0..m {
        let p = sampler.sample_waiting(&mut rng).unwrap();
        sp.push(p.ln_plus);
        sm.push(p.ln_minus);
        sr.push(p.log_ratio());
        let (a, b) = scan_waiting(&model, &word, &mut rng);
        cp.push(a);
        cm.push(b);
        cr.push(b - a);
    }
    let crit = critical(m, m);
    let d = ks_two_sample(&mut sp, &mut cp);
    assert!(d < crit, "ks {d} above {crit}");
    let d = ks_two_sample(&mut sm, &mut cm);
    assert!(d < crit, "ks {d} above {crit}");
    let d = ks_two_sample(&mut sr, &mut cr);
    assert!(d < crit, "ks {d} above {crit}");
}

#[test]
fn return_pair_law_matches_scan_on_higher_order_chain() {
    let model = order_two();
    let word = [1u8, 0, 0, 2, 1, 0];
    let mut sampler = PairSampler::new(&model, &word).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let m = 3000;
    let (mut sp, mut sm, mut cp, mut cm) = (vec![], vec![], vec![], vec![]);
    for _ in 0..m {
        let p = sampler.sample_return(&mut rng).unwrap();
        sp.push(p.ln_plus);
        sm.push(p.ln_minus);
        let (a, b) = scan_return(&model, &word, &mut rng);
        cp.push(a);
        cm.push(b);
    }
    let crit = critical(m, m);
    let d = ks_two_sample(&mut sp, &mut cp);
    assert!(d < crit, "ks {d} above {crit}");
    let d = ks_two_sample(&mut sm, &mut cm);
    assert!(d < crit, "ks {d} above {crit}");
}

#[test]
fn estimator_law_matches_scan_with_random_words() {
    let model = order_two();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let m = 3000;
    let (mut s_w, mut c_w, mut s_h, mut c_h) = (vec![], vec![], vec![], vec![]);
    for _ in 0..m {
        let word = draw_word(&model, 5, &mut rng);
        let mut sampler = PairSampler::new(&model, &word).unwrap();
        s_w.push(sampler.sample_waiting(&mut rng).unwrap().log_ratio());
        s_h.push(sampler.sample_return(&mut rng).unwrap().log_ratio());
        let (a, b) = scan_waiting(&model, &word, &mut rng);
        c_w.push(b - a);
        let (a, b) = scan_return(&model, &word, &mut rng);
        c_h.push(b - a);
    }
    let crit = critical(m, m);
    let d = ks_two_sample(&mut s_w, &mut c_w);
    assert!(d < crit, "ks {d} above {crit}");
    let d = ks_two_sample(&mut s_h, &mut c_h);
    assert!(d < crit, "ks {d} above {crit}");
}

/// Kac: the mean return time to a cylinder is `1 / P([a])`, at any length.
#[test]
fn kac_mean_return_time() {
    let model = MarkovModel::cyclic(0.5, 0.25).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for n in [6usize, 40, 120] {
        let word = draw_word(&model, n, &mut rng);
        let ln_p = model.cylinder_log_prob(&word).unwrap();
        let mut sampler = PairSampler::new(&model, &word).unwrap();
        let m = 20_000;
        let scaled: Vec<f64> = (0..m)
            .map(|_| (sampler.sample_return(&mut rng).unwrap().ln_plus + ln_p).exp())
            .collect();
        let mean = scaled.iter().sum::<f64>() / m as f64;
        let var = scaled.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        let se = (var / m as f64).sqrt();
        assert!((mean - 1.0).abs() < 4.0 * se, "n={n} mean={mean} se={se}");
    }
}
