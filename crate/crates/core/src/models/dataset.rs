use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const MAX_MODULUS: usize = 257;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModOp {
    Add,
    Mul,
}

impl ModOp {
    pub fn apply(self, a: usize, b: usize, p: usize) -> usize {
        match self {
            ModOp::Add => (a + b) % p,
            ModOp::Mul => (a * b) % p,
        }
    }
}

impl fmt::Display for ModOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModOp::Add => "add",
            ModOp::Mul => "mul",
        })
    }
}

impl FromStr for ModOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "add" => Ok(ModOp::Add),
            "mul" => Ok(ModOp::Mul),
            other => Err(Error::invalid("op", format!("unknown op `{other}`"))),
        }
    }
}

pub fn is_prime(n: usize) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

/// `round(x)` with halves rounded up.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModExample {
    pub a: usize,
    pub b: usize,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModularDataset {
    pub p: usize,
    pub op: ModOp,
    pub train: Vec<ModExample>,
    pub val: Vec<ModExample>,
    pub train_frac: f64,
    pub seed: u64,
}

/// Uniformly random train/val partition of all `p^2` pairs.
pub fn gen_modular_dataset(p: usize, op: ModOp, train_frac: f64, seed: u64) -> Result<ModularDataset> {
    if !(2..=MAX_MODULUS).contains(&p) {
        return Err(Error::invalid("p", format!("must lie in [2, {MAX_MODULUS}]")));
    }
    if !is_prime(p) {
        return Err(Error::NotPrime(p));
    }
    if !(train_frac > 0.0 && train_frac <= 1.0) {
        return Err(Error::invalid("train_frac", "must lie in (0, 1]"));
    }
    let mut all: Vec<ModExample> = (0..p)
        .flat_map(|a| (0..p).map(move |b| (a, b)))
        .map(|(a, b)| ModExample {
            a,
            b,
            label: op.apply(a, b, p),
        })
        .collect();
    let mut rng = rng::seeded(seed);
    all.shuffle(&mut rng);
    let n_train = round_half_up(train_frac * (p * p) as f64).min(p * p);
    let mut val = all.split_off(n_train);
    let mut train = all;
    let key = |e: &ModExample| (e.a, e.b);
    train.sort_by_key(key);
    val.sort_by_key(key);
    Ok(ModularDataset {
        p,
        op,
        train,
        val,
        train_frac,
        seed,
    })
}

impl ModularDataset {
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["a", "b", "label", "split"])?;
        for (split, rows) in [("train", &self.train), ("val", &self.val)] {
            for e in rows {
                out.write_record([
                    e.a.to_string(),
                    e.b.to_string(),
                    e.label.to_string(),
                    split.to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the `(train, val)` examples back from [`write_csv`](Self::write_csv) output.
    pub fn read_csv<R: Read>(r: R) -> Result<(Vec<ModExample>, Vec<ModExample>)> {
        let mut rdr = csv::Reader::from_reader(r);
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Csv {
                path: "<dataset>".into(),
                source: e,
            })?;
            let num = |i: usize| -> Result<usize> {
                rec.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Malformed {
                        path: "<dataset>".into(),
                        reason: format!("bad field {i} in {rec:?}"),
                    })
            };
            let e = ModExample {
                a: num(0)?,
                b: num(1)?,
                label: num(2)?,
            };
            match rec.get(3) {
                Some("train") => train.push(e),
                Some("val") => val.push(e),
                other => {
                    return Err(Error::Malformed {
                        path: "<dataset>".into(),
                        reason: format!("unknown split {other:?}"),
                    })
                }
            }
        }
        Ok((train, val))
    }
}

/// Parity examples store the input as a bit mask (bit `i` is coordinate `i`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParityExample {
    pub bits: u64,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParityDataset {
    pub n: usize,
    pub support: [usize; 3],
    pub train: Vec<ParityExample>,
    pub val: Vec<ParityExample>,
    pub seed: u64,
}

pub fn parity_label(bits: u64, support: &[usize]) -> u8 {
    support.iter().fold(0u8, |acc, &i| acc ^ ((bits >> i) & 1) as u8)
}

/// 3-sparse parity over `{0,1}^n` with distinct train/val inputs.
pub fn gen_parity_dataset(n: usize, num_train: usize, num_val: usize, seed: u64) -> Result<ParityDataset> {
    if !(4..=64).contains(&n) {
        return Err(Error::invalid("n", "must lie in [4, 64]"));
    }
    let requested = num_train + num_val;
    let mut rng = rng::seeded(seed);
    let mut support = [0usize; 3];
    let mut picked = index::sample(&mut rng, n, 3).into_vec();
    picked.sort_unstable();
    support.copy_from_slice(&picked);

    let inputs: Vec<u64> = if n <= 20 {
        let space = 1usize << n;
        if requested > space {
            return Err(Error::InsufficientExamples {
                requested,
                available: space,
            });
        }
        index::sample(&mut rng, space, requested)
            .into_iter()
            .map(|i| i as u64)
            .collect()
    } else {
        let mask = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        let mut seen = HashSet::with_capacity(requested);
        let mut out = Vec::with_capacity(requested);
        while out.len() < requested {
            let x = rng.random::<u64>() & mask;
            if seen.insert(x) {
                out.push(x);
            }
        }
        out
    };
    let make = |bits: u64| ParityExample {
        bits,
        label: parity_label(bits, &support),
    };
    let train = inputs[..num_train].iter().copied().map(make).collect();
    let val = inputs[num_train..].iter().copied().map(make).collect();
    Ok(ParityDataset {
        n,
        support,
        train,
        val,
        seed,
    })
}

impl ParityDataset {
    pub fn bit_string(&self, bits: u64) -> String {
        (0..self.n)
            .map(|i| if (bits >> i) & 1 == 1 { '1' } else { '0' })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bits", "label", "split"])?;
        for (split, rows) in [("train", &self.train), ("val", &self.val)] {
            for e in rows {
                out.write_record([self.bit_string(e.bits), e.label.to_string(), split.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modular_partition_counts() {
        for seed in 0..5 {
            let d = gen_modular_dataset(5, ModOp::Add, 0.5, seed).unwrap();
            assert_eq!(d.train.len(), 13);
            assert_eq!(d.val.len(), 12);
            let tr: HashSet<_> = d.train.iter().map(|e| (e.a, e.b)).collect();
            let va: HashSet<_> = d.val.iter().map(|e| (e.a, e.b)).collect();
            assert!(tr.is_disjoint(&va));
            assert_eq!(tr.len() + va.len(), 25);
        }
    }

    #[test]
    fn labels() {
        assert_eq!(ModOp::Mul.apply(2, 3, 5), 1);
        assert_eq!(ModOp::Add.apply(4, 4, 5), 3);
        let d = gen_modular_dataset(7, ModOp::Mul, 1.0, 3).unwrap();
        assert!(d.val.is_empty());
        assert!(d.train.iter().all(|e| e.label == (e.a * e.b) % 7));
    }

    #[test]
    fn modular_rejects_composite_and_bad_frac() {
        assert!(matches!(gen_modular_dataset(9, ModOp::Add, 0.5, 0), Err(Error::NotPrime(9))));
        assert!(gen_modular_dataset(7, ModOp::Add, 0.0, 0).is_err());
        assert!(gen_modular_dataset(263, ModOp::Add, 0.5, 0).is_err());
    }

    #[test]
    fn modular_csv_is_deterministic() {
        let render = |seed| {
            let mut buf = Vec::new();
            gen_modular_dataset(11, ModOp::Add, 0.4, seed)
                .unwrap()
                .write_csv(&mut buf)
                .unwrap();
            buf
        };
        assert_eq!(render(9), render(9));
        assert_ne!(render(9), render(10));
        let text = String::from_utf8(render(9)).unwrap();
        assert!(text.starts_with("a,b,label,split\n"));
        let d = gen_modular_dataset(11, ModOp::Add, 0.4, 9).unwrap();
        let (tr, va) = ModularDataset::read_csv(text.as_bytes()).unwrap();
        assert_eq!((tr, va), (d.train, d.val));
    }

    #[test]
    fn parity_labels() {
        let support = [0, 1, 2];
        // "101000..." -> bits 0 and 2 set.
        assert_eq!(parity_label(0b101, &support), 0);
        assert_eq!(parity_label(0b001, &support), 1);
        assert_eq!(parity_label(0, &[3, 7, 9]), 0);
    }

    #[test]
    fn parity_counts_and_disjointness() {
        let d = gen_parity_dataset(20, 4096, 4096, 1).unwrap();
        let all: HashSet<u64> = d.train.iter().chain(&d.val).map(|e| e.bits).collect();
        assert_eq!(all.len(), 8192);
        assert!(d.train.iter().all(|e| e.label == parity_label(e.bits, &d.support)));
        assert!(d.support.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(d, gen_parity_dataset(20, 4096, 4096, 1).unwrap());
    }

    #[test]
    fn parity_insufficient_examples() {
        assert!(matches!(
            gen_parity_dataset(4, 10, 7, 0),
            Err(Error::InsufficientExamples { requested: 17, available: 16 })
        ));
        let wide = gen_parity_dataset(40, 100, 100, 0).unwrap();
        assert_eq!(wide.train.len() + wide.val.len(), 200);
    }

    #[test]
    fn parity_csv_header() {
        let d = gen_parity_dataset(6, 3, 2, 0).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("bits,label,split"));
        assert_eq!(lines.count(), 5);
    }
}
