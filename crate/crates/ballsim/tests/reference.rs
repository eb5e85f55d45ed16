//! Exact distributions and distribution vectors checked against a brute-force
//! enumeration of every sample sequence, using a separate straight-line implementation
//! of each process.

use std::collections::BTreeMap;

use ballsim::framework::distribution_vector;
use ballsim::oracle::exact_gap_distribution;
use ballsim::process::{ratio, ProcessConfig, ProcessState};
use ballsim::{LoadState, Rational};
use num_bigint::BigInt;
use num_rational::BigRational;

mod common;
use common::*;

fn enumerate(k: Kind, s: Ref, m: i64, weight: BigRational, out: &mut BTreeMap<Rational, BigRational>) {
    let done = if single_ball(k) { s.t >= m } else { s.w() >= m };
    if done {
        *out.entry(s.gap()).or_insert_with(|| BigRational::from_integer(0.into())) += weight;
        return;
    }
    let tuples = sample_tuples(k, s.x.len());
    let share = &weight / BigRational::from_integer(BigInt::from(tuples.len()));
    for samples in tuples {
        let mut next = s.clone();
        apply(k, &mut next, &samples);
        enumerate(k, next, m, share.clone(), out);
    }
}

fn brute(k: Kind, n: usize, m: i64) -> BTreeMap<Rational, BigRational> {
    let mut out = BTreeMap::new();
    enumerate(k, Ref { x: vec![0; n], cache: None, t: 0 }, m, BigRational::from_integer(1.into()), &mut out);
    out
}

#[test]
fn exact_distributions_match_enumeration() {
    let cases = [
        (Kind::One, 3, 5),
        (Kind::D(2), 3, 5),
        (Kind::D(3), 3, 4),
        (Kind::Caching, 3, 6),
        (Kind::Packing, 3, 7),
        (Kind::Twinning, 3, 6),
        (Kind::Thin(0), 3, 5),
        (Kind::Thin(1), 3, 5),
        (Kind::OverPacking, 4, 8),
        (Kind::Caching, 4, 5),
        (Kind::Twinning, 2, 5),
    ];
    for (k, n, m) in cases {
        let c = config(k);
        let want = brute(k, n, m);
        let got = exact_gap_distribution(&c, n, m).unwrap();
        assert_eq!(got.probs, want, "{c} n={n} m={m}");
    }
}

#[test]
fn small_frozen_distributions() {
    let half = BigRational::new(1.into(), 2.into());
    let got = exact_gap_distribution(&ProcessConfig::OneChoice, 2, 2).unwrap();
    assert_eq!(got.prob(ratio(0, 1)), half);
    assert_eq!(got.prob(ratio(1, 1)), half);
    let got = exact_gap_distribution(&ProcessConfig::two_choice(), 2, 2).unwrap();
    assert_eq!(got.prob(ratio(0, 1)), BigRational::new(3.into(), 4.into()));
    assert_eq!(got.prob(ratio(1, 1)), BigRational::new(1.into(), 4.into()));
    let got = exact_gap_distribution(&ProcessConfig::Twinning, 2, 1).unwrap();
    assert_eq!(got.probs.len(), 1);
    assert_eq!(got.prob(ratio(1, 2)), BigRational::from_integer(1.into()));
}

/// Probability that each rank receives the ball, from every sample combination.
fn brute_vector(k: Kind, s: &Ref) -> Vec<Rational> {
    let n = s.x.len();
    let tuples = sample_tuples(k, n);
    let total = tuples.len() as i64;
    let mut hits = vec![0i64; n];
    for samples in tuples {
        let mut next = s.clone();
        apply(k, &mut next, &samples);
        let bin = (0..n).find(|&i| next.x[i] != s.x[i]).unwrap();
        hits[bin] += 1;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (-s.x[i], i));
    order.iter().map(|&i| Rational::new(hits[i], total)).collect()
}

#[test]
fn distribution_vectors_match_enumeration() {
    let states: [&[i64]; 6] =
        [&[0, 0, 0, 0], &[3, 1, 1, 0], &[2, 2, 0, 5], &[1, 4, 4, 4, 0], &[7, 0, 3, 3, 3, 2], &[1, 1, 2, 2]];
    for x in states {
        let n = x.len();
        for k in [Kind::One, Kind::D(2), Kind::D(3), Kind::Thin(0), Kind::Thin(1), Kind::Packing, Kind::Twinning] {
            let r = Ref { x: x.to_vec(), cache: None, t: x.iter().sum() };
            let st = ProcessState { load: LoadState::from_loads(x.to_vec()).unwrap(), cache: None, round: r.t as u64 };
            let p = distribution_vector(&config(k), &st).unwrap();
            let want = brute_vector(k, &r);
            for (rank, w) in want.iter().enumerate() {
                let got = p.prob(rank);
                assert_eq!(
                    (*got.numer() as i64, *got.denom() as i64),
                    (*w.numer(), *w.denom()),
                    "{} at {x:?}, rank {rank}",
                    config(k)
                );
            }
        }
        for b in 0..n {
            let r = Ref { x: x.to_vec(), cache: Some(b), t: 0 };
            let st = ProcessState { load: LoadState::from_loads(x.to_vec()).unwrap(), cache: Some(b), round: 0 };
            let p = distribution_vector(&ProcessConfig::Caching, &st).unwrap();
            for (rank, w) in brute_vector(Kind::Caching, &r).iter().enumerate() {
                let got = p.prob(rank);
                assert_eq!((*got.numer() as i64, *got.denom() as i64), (*w.numer(), *w.denom()), "caching {x:?} b={b}");
            }
        }
    }
}

#[test]
fn one_plus_beta_vector_closed_form() {
    for n in [2usize, 5, 9] {
        let st = ProcessState::new(n).unwrap();
        for beta in [ratio(1, 4), ratio(1, 2), ratio(1, 1)] {
            let p = distribution_vector(&ProcessConfig::OnePlusBeta { beta }, &st).unwrap();
            for i in 1..=n as i64 {
                let q = (Rational::from_integer(1) - beta) / n as i64 + beta * (2 * i - 1) / (n as i64 * n as i64);
                let got = p.prob(i as usize - 1);
                assert_eq!((*got.numer() as i64, *got.denom() as i64), (*q.numer(), *q.denom()));
            }
        }
    }
}
