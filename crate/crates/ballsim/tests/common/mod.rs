//! Straight-line reference implementations of the processes, written from their definitions.

#![allow(dead_code)]

use ballsim::process::ProcessConfig;
use ballsim::Rational;

#[derive(Clone)]
pub struct Ref {
    pub x: Vec<i64>,
    pub cache: Option<usize>,
    pub t: i64,
}

impl Ref {
    pub fn w(&self) -> i64 {
        self.x.iter().sum()
    }

    pub fn n(&self) -> i64 {
        self.x.len() as i64
    }

    /// `x_i < W/n`
    pub fn under(&self, i: usize) -> bool {
        self.x[i] * self.n() < self.w()
    }

    pub fn gap(&self) -> Rational {
        Rational::new(*self.x.iter().max().unwrap() * self.n() - self.w(), self.n())
    }
}

#[derive(Clone, Copy)]
pub enum Kind {
    One,
    D(usize),
    Caching,
    Packing,
    Twinning,
    Thin(i64),
    OverPacking,
}

pub fn samples_per_round(k: Kind) -> usize {
    match k {
        Kind::D(d) => d,
        Kind::Thin(_) => 2,
        _ => 1,
    }
}

pub fn ceil_div(a: i64, b: i64) -> i64 {
    (a + b - 1).div_euclid(b)
}

/// Applies one round given its samples.
pub fn apply(k: Kind, s: &mut Ref, samples: &[usize]) {
    let n = s.n();
    let w = s.w();
    match k {
        Kind::One => s.x[samples[0]] += 1,
        Kind::D(_) => {
            let min = samples.iter().map(|&i| s.x[i]).min().unwrap();
            let pick = samples.iter().copied().filter(|&i| s.x[i] == min).max().unwrap();
            s.x[pick] += 1;
        }
        Kind::Caching => {
            let i = samples[0];
            match s.cache {
                None => {
                    s.cache = Some(i);
                    s.x[i] += 1;
                }
                Some(b) if s.x[i] < s.x[b] => {
                    s.cache = Some(i);
                    s.x[i] += 1;
                }
                Some(b) if s.x[i] == s.x[b] => s.x[i] += 1,
                Some(b) => s.x[b] += 1,
            }
        }
        Kind::Packing => {
            let i = samples[0];
            if s.under(i) {
                s.x[i] = ceil_div(w, n) + 1;
            } else {
                s.x[i] += 1;
            }
        }
        Kind::Twinning => {
            let i = samples[0];
            s.x[i] += if s.under(i) { 2 } else { 1 };
        }
        Kind::Thin(f) => {
            let (i1, i2) = (samples[0], samples[1]);
            if s.x[i1] * n < s.t + f * n {
                s.x[i1] += 1;
            } else {
                s.x[i2] += 1;
            }
        }
        Kind::OverPacking => {
            let i = samples[0];
            if !s.under(i) {
                s.x[i] += 1;
            } else {
                let mut balls = ceil_div(w, n) - s.x[i] + 1;
                let level = ceil_div(w, n);
                let old = s.x.clone();
                let mut order: Vec<usize> = (0..s.x.len()).filter(|&j| old[j] * n < w).collect();
                order.sort_by_key(|&j| (-old[j], j));
                let j0 = order[0];
                balls -= level - old[j0];
                s.x[j0] = level;
                for &j in &order[1..] {
                    while balls > 0 && s.x[j] < level - 1 {
                        s.x[j] += 1;
                        balls -= 1;
                    }
                }
                s.x[j0] += balls;
            }
        }
    }
    s.t += 1;
}

pub fn single_ball(k: Kind) -> bool {
    !matches!(k, Kind::Packing | Kind::Twinning | Kind::OverPacking)
}

pub fn config(k: Kind) -> ProcessConfig {
    match k {
        Kind::One => ProcessConfig::OneChoice,
        Kind::D(d) => ProcessConfig::DChoice { d: d as u32 },
        Kind::Caching => ProcessConfig::Caching,
        Kind::Packing => ProcessConfig::Packing,
        Kind::Twinning => ProcessConfig::Twinning,
        Kind::Thin(0) => ProcessConfig::MeanThinning,
        Kind::Thin(f) => ProcessConfig::Thinning { f: Rational::from_integer(f) },
        Kind::OverPacking => ProcessConfig::OverPacking,
    }
}

/// Every equally likely sample tuple of one round.
pub fn sample_tuples(k: Kind, n: usize) -> Vec<Vec<usize>> {
    let d = samples_per_round(k);
    (0..n.pow(d as u32))
        .map(|code| {
            let mut c = code;
            (0..d)
                .map(|_| {
                    let i = c % n;
                    c /= n;
                    i
                })
                .collect()
        })
        .collect()
}
