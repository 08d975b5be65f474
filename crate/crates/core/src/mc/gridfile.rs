//! Scenario grid files: flat key-value text, one `[scenario]` block per
//! scenario family. A value may be a single number or an inclusive range
//! `start:end:step`; blocks expand to the cartesian product of their ranged
//! keys.
//!
//! ```text
//! # four scenarios: cv in {0, 0.2, 0.4} x one extra block
//! [scenario]
//! n = 10
//! mbar = 20
//! cv = 0:0.4:0.2
//! tau = 0.01
//! p0 = 0.2
//!
//! [scenario]
//! n = 6
//! mbar = 50
//! cv = 0
//! tau = 0.1
//! p0 = 0.5
//! ```
//!
//! Keys `pa` (default 0.2), `kappa` (default 1) and `beta` (default 0) are
//! optional; `n`, `mbar`, `cv`, `tau`, `p0` are required.

use thiserror::Error;

use crate::sim::Scenario;

const KEYS: [&str; 8] = ["n", "mbar", "cv", "tau", "p0", "pa", "kappa", "beta"];
const REQUIRED: [bool; 8] = [true, true, true, true, true, false, false, false];
const DEFAULTS: [f64; 8] = [f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN, 0.2, 1.0, 0.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("line {line}: expected `[scenario]` or `key = value`, got `{text}`")]
    BadLine { line: usize, text: String },
    #[error("line {line}: `key = value` outside any [scenario] block")]
    OutsideBlock { line: usize },
    #[error("[scenario] block {block}, key `{key}`: unknown key")]
    UnknownKey { block: usize, key: String },
    #[error("[scenario] block {block}, key `{key}`: bad value `{token}`")]
    BadValue {
        block: usize,
        key: String,
        token: String,
    },
    #[error("[scenario] block {block}, key `{key}`: duplicate assignment")]
    DuplicateKey { block: usize, key: String },
    #[error("[scenario] block {block}, key `{key}`: required key missing")]
    MissingKey { block: usize, key: String },
    #[error("[scenario] block {block}, key `n`: cluster count must be an even integer >= 2, got {value}")]
    BadClusterCount { block: usize, value: f64 },
    #[error("grid file defines no scenarios")]
    Empty,
}

/// Parse a grid file; every expanded scenario is stamped with `base_seed`.
pub fn parse_grid(text: &str, base_seed: u64) -> Result<Vec<Scenario>, GridError> {
    let mut scenarios = Vec::new();
    let mut block: Option<Block> = None;
    let mut block_no = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line == "[scenario]" {
            if let Some(b) = block.take() {
                b.expand(base_seed, &mut scenarios)?;
            }
            block_no += 1;
            block = Some(Block::new(block_no));
            continue;
        }
        if line.starts_with('[') {
            return Err(GridError::BadLine {
                line: line_no,
                text: line.to_string(),
            });
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(GridError::BadLine {
                line: line_no,
                text: line.to_string(),
            });
        };
        let Some(b) = block.as_mut() else {
            return Err(GridError::OutsideBlock { line: line_no });
        };
        b.set(key.trim(), value.trim())?;
    }
    if let Some(b) = block.take() {
        b.expand(base_seed, &mut scenarios)?;
    }
    if scenarios.is_empty() {
        return Err(GridError::Empty);
    }
    Ok(scenarios)
}

struct Block {
    number: usize,
    values: [Option<Vec<f64>>; 8],
}

impl Block {
    fn new(number: usize) -> Self {
        Block {
            number,
            values: Default::default(),
        }
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), GridError> {
        let Some(slot) = KEYS.iter().position(|k| *k == key) else {
            return Err(GridError::UnknownKey {
                block: self.number,
                key: key.to_string(),
            });
        };
        if self.values[slot].is_some() {
            return Err(GridError::DuplicateKey {
                block: self.number,
                key: key.to_string(),
            });
        }
        self.values[slot] = Some(self.parse_values(key, value)?);
        Ok(())
    }

    fn parse_values(&self, key: &str, value: &str) -> Result<Vec<f64>, GridError> {
        let bad = || GridError::BadValue {
            block: self.number,
            key: key.to_string(),
            token: value.to_string(),
        };
        let parse = |tok: &str| tok.trim().parse::<f64>().map_err(|_| bad());
        if let Some((start, rest)) = value.split_once(':') {
            let (end, step) = rest.split_once(':').ok_or_else(bad)?;
            let (start, end, step) = (parse(start)?, parse(end)?, parse(step)?);
            if step <= 0.0 || end < start || !start.is_finite() || !end.is_finite() || !step.is_finite()
            {
                return Err(bad());
            }
            // Inclusive range with a small tolerance so 0:1:0.1 hits 1.0.
            let count = ((end - start) / step + 1e-9).floor() as usize + 1;
            return Ok((0..count).map(|i| start + i as f64 * step).collect());
        }
        let v = parse(value)?;
        if !v.is_finite() {
            return Err(bad());
        }
        Ok(vec![v])
    }

    fn expand(self, base_seed: u64, out: &mut Vec<Scenario>) -> Result<(), GridError> {
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(8);
        for slot in 0..8 {
            match &self.values[slot] {
                Some(v) => values.push(v.clone()),
                None if REQUIRED[slot] => {
                    return Err(GridError::MissingKey {
                        block: self.number,
                        key: KEYS[slot].to_string(),
                    });
                }
                None => values.push(vec![DEFAULTS[slot]]),
            }
        }
        // Odometer over the cartesian product; later keys vary fastest.
        let mut idx = [0usize; 8];
        loop {
            let pick = |slot: usize| values[slot][idx[slot]];
            let n_f = pick(0);
            if n_f.fract() != 0.0 || n_f < 2.0 || !(n_f as usize).is_multiple_of(2) {
                return Err(GridError::BadClusterCount {
                    block: self.number,
                    value: n_f,
                });
            }
            out.push(Scenario {
                n: n_f as usize,
                mbar: pick(1),
                cv: pick(2),
                tau: pick(3),
                p0: pick(4),
                pa: pick(5),
                kappa: pick(6),
                beta: pick(7),
                seed: base_seed,
            });
            let mut slot = 8;
            loop {
                if slot == 0 {
                    return Ok(());
                }
                slot -= 1;
                idx[slot] += 1;
                if idx[slot] < values[slot].len() {
                    break;
                }
                idx[slot] = 0;
            }
        }
    }
}
