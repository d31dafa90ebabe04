//! Ground-truth sparse sequences with periodic additions and removals.
//!
//! `S0 - Sa` coefficients start at `+-M`. Every `d` steps, starting at
//! `t = 1`, `Sa` new coefficients appear and grow by `a_i` per step for `d`
//! steps up to at most `M`. The same number of existing coefficients ramp
//! down linearly over the last `r` steps of that period and vanish at its
//! final step.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::support::{SignalVector, SupportSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
}

/// Per-coefficient growth rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rates {
    Uniform { value: f64 },
    /// `first` for indices below `m / 2`, `second` for the rest.
    Split { first: f64, second: f64 },
    PerIndex { values: Vec<f64> },
}

impl Rates {
    pub fn to_vec(&self, m: usize) -> Vec<f64> {
        match self {
            Rates::Uniform { value } => vec![*value; m],
            Rates::Split { first, second } => {
                (0..m).map(|i| if i < m / 2 { *first } else { *second }).collect()
            }
            Rates::PerIndex { values } => values.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalModelParams {
    pub m: usize,
    pub s0: usize,
    pub sa: usize,
    /// Period between addition times.
    pub d: usize,
    /// Length of the removal ramp.
    pub r: usize,
    /// Plateau magnitude `M`.
    pub magnitude: f64,
    pub rates: Rates,
    /// Last time index generated.
    pub horizon: usize,
}

impl SignalModelParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidParameter(msg));
        if self.m == 0 {
            return bad("m must be positive".into());
        }
        if self.sa > self.s0 {
            return bad(format!("Sa={} exceeds S0={}", self.sa, self.s0));
        }
        if self.sa > self.s0 - self.sa {
            return bad(format!(
                "removals need Sa={} <= S0-Sa={}",
                self.sa,
                self.s0 - self.sa
            ));
        }
        if self.s0 + self.sa > self.m {
            return bad(format!("S0+Sa={} exceeds m={}", self.s0 + self.sa, self.m));
        }
        if self.r == 0 || self.r >= self.d {
            return bad(format!("need 1 <= r < d, got r={} d={}", self.r, self.d));
        }
        if !(self.magnitude > 0.0 && self.magnitude.is_finite()) {
            return bad(format!("M must be positive, got {}", self.magnitude));
        }
        let rates = self.rates.to_vec(self.m);
        if rates.len() != self.m {
            return bad(format!("{} rates for m={}", rates.len(), self.m));
        }
        if rates.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return bad("rates must be positive and finite".into());
        }
        Ok(())
    }

    /// Addition time of epoch `j >= 1`.
    pub fn addition_time(&self, j: usize) -> usize {
        1 + (j - 1) * self.d
    }

    /// Magnitude reached after `d` steps of growth.
    pub fn plateau(&self, rate: f64) -> f64 {
        self.magnitude.min(self.d as f64 * rate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Increasing,
    Constant,
    Decreasing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: usize,
    pub x: SignalVector,
    pub support: SupportSet,
    /// Role of each index in `support`, in the same order.
    pub roles: Vec<Role>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Epoch {
    pub j: usize,
    pub t_add: usize,
    pub added: SupportSet,
    pub removed: SupportSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSequence {
    pub params: SignalModelParams,
    pub seed: u64,
    pub frames: Vec<Frame>,
    pub epochs: Vec<Epoch>,
}

impl SignalSequence {
    /// The epoch whose period `[t_j, t_{j+1} - 1]` contains `t >= 1`.
    pub fn epoch_at(&self, t: usize) -> Option<&Epoch> {
        if t == 0 {
            return None;
        }
        self.epochs.get((t - 1) / self.params.d)
    }
}

struct Life {
    index: usize,
    sign: f64,
    born: usize,
    rate: f64,
    initial: bool,
    /// `(first ramp-down step, step at which the value is zero)`
    death: Option<(usize, usize)>,
}

impl Life {
    fn growth(&self, p: &SignalModelParams, t: usize) -> f64 {
        if self.initial {
            return p.magnitude;
        }
        let k = (t - self.born).min(p.d - 1);
        p.magnitude.min((k + 1) as f64 * self.rate)
    }

    fn value(&self, p: &SignalModelParams, t: usize) -> f64 {
        if t < self.born {
            return 0.0;
        }
        if let Some((start, zero_at)) = self.death {
            if t >= zero_at {
                return 0.0;
            }
            if t >= start {
                let top = self.growth(p, start);
                return self.sign * top * (zero_at - t) as f64 / p.r as f64;
            }
        }
        self.sign * self.growth(p, t)
    }
}

pub fn generate(params: &SignalModelParams, seed: u64) -> Result<SignalSequence, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_with_rng(params, seed, &mut rng)
}

pub fn generate_with_rng<R: Rng + ?Sized>(
    params: &SignalModelParams,
    seed: u64,
    rng: &mut R,
) -> Result<SignalSequence, ModelError> {
    params.validate()?;
    let p = params;
    let m = p.m;
    let rates = p.rates.to_vec(m);
    let sign = |rng: &mut R| if rng.random::<bool>() { 1.0 } else { -1.0 };

    let mut lives: Vec<Life> = Vec::new();
    let mut active: Vec<usize> = sample(rng, m, p.s0 - p.sa).into_vec();
    active.sort_unstable();
    for &i in &active {
        lives.push(Life {
            index: i,
            sign: sign(rng),
            born: 0,
            rate: rates[i],
            initial: true,
            death: None,
        });
    }

    let mut epochs = Vec::new();
    let mut j = 1;
    while p.addition_time(j) <= p.horizon {
        let t_add = p.addition_time(j);
        let next = t_add + p.d;
        let inactive: Vec<usize> = (0..m).filter(|i| !active.contains(i)).collect();
        let mut added: Vec<usize> = sample(rng, inactive.len(), p.sa)
            .into_iter()
            .map(|k| inactive[k])
            .collect();
        added.sort_unstable();
        let mut removed: Vec<usize> = sample(rng, active.len(), p.sa)
            .into_iter()
            .map(|k| active[k])
            .collect();
        removed.sort_unstable();
        for &i in &removed {
            if let Some(l) = lives.iter_mut().find(|l| l.index == i && l.death.is_none()) {
                l.death = Some((next - p.r, next - 1));
            }
        }
        for &i in &added {
            lives.push(Life {
                index: i,
                sign: sign(rng),
                born: t_add,
                rate: rates[i],
                initial: false,
                death: None,
            });
        }
        active.retain(|i| !removed.contains(i));
        active.extend_from_slice(&added);
        active.sort_unstable();
        epochs.push(Epoch {
            j,
            t_add,
            added: SupportSet::new(m, added).expect("indices in range"),
            removed: SupportSet::new(m, removed).expect("indices in range"),
        });
        j += 1;
    }

    let mut frames = Vec::with_capacity(p.horizon + 1);
    for t in 0..=p.horizon {
        let mut x = SignalVector::zeros(m);
        for l in &lives {
            let v = l.value(p, t);
            if v != 0.0 {
                x.set(l.index, v);
            }
        }
        let support = x.support();
        let roles = support
            .iter()
            .map(|i| role_of(p, &epochs, i, t))
            .collect();
        frames.push(Frame {
            t,
            x,
            support,
            roles,
        });
    }
    Ok(SignalSequence {
        params: p.clone(),
        seed,
        frames,
        epochs,
    })
}

fn role_of(p: &SignalModelParams, epochs: &[Epoch], i: usize, t: usize) -> Role {
    if t == 0 {
        return Role::Constant;
    }
    let e = &epochs[(t - 1) / p.d];
    let next = e.t_add + p.d;
    if t == next - 1 {
        return Role::Constant;
    }
    if e.added.contains(i) {
        return Role::Increasing;
    }
    if e.removed.contains(i) && t >= next - p.r {
        return Role::Decreasing;
    }
    Role::Constant
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeStats {
    pub t: usize,
    pub additions: usize,
    pub removals: usize,
    /// Additions relative to `|N_t|`.
    pub add_fraction: f64,
    /// Removals relative to `|N_{t-1}|`.
    pub remove_fraction: f64,
}

/// Support additions and removals between consecutive frames, for `t >= 1`.
pub fn support_change_stats(seq: &SignalSequence) -> Vec<ChangeStats> {
    seq.frames
        .windows(2)
        .map(|w| {
            let (prev, cur) = (&w[0].support, &w[1].support);
            let additions = cur.difference(prev).expect("same dimension").len();
            let removals = prev.difference(cur).expect("same dimension").len();
            let frac = |k: usize, of: usize| if of == 0 { 0.0 } else { k as f64 / of as f64 };
            ChangeStats {
                t: w[1].t,
                additions,
                removals,
                add_fraction: frac(additions, cur.len()),
                remove_fraction: frac(removals, prev.len()),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> SignalModelParams {
        SignalModelParams {
            m: 200,
            s0: 20,
            sa: 2,
            d: 8,
            r: 2,
            magnitude: 3.0,
            rates: Rates::Split {
                first: 0.5,
                second: 0.25,
            },
            horizon: 40,
        }
    }

    #[test]
    fn validation() {
        let mut p = params();
        p.r = 8;
        assert!(p.validate().is_err());
        let mut p = params();
        p.sa = 11;
        assert!(p.validate().is_err());
        let mut p = params();
        p.rates = Rates::PerIndex { values: vec![1.0; 3] };
        assert!(p.validate().is_err());
        assert!(params().validate().is_ok());
    }

    #[test]
    fn roles_and_support_sizes() {
        let seq = generate(&params(), 7).unwrap();
        assert_eq!(seq.frames[0].support.len(), 18);
        // within a period the support holds S0 entries, dropping back at its end
        for f in &seq.frames[1..] {
            let at_end = f.t % 8 == 0;
            assert_eq!(f.support.len(), if at_end { 18 } else { 20 }, "t={}", f.t);
        }
        let f = &seq.frames[7];
        let dec = f.roles.iter().filter(|&&r| r == Role::Decreasing).count();
        assert_eq!(dec, 2);
        let f = &seq.frames[8];
        assert!(f.roles.iter().all(|&r| r == Role::Constant));
    }
}
