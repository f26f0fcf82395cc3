use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Shuffles `ids` by `seed`, then takes `round(0.15·N)` for test,
/// `round(0.05·N)` for validation and the rest for training.
pub fn make_split(ids: &[String], seed: u64) -> DatasetSplit {
    let n = ids.len();
    let n_test = round_half_up(0.15 * n as f64).min(n);
    let n_val = round_half_up(0.05 * n as f64).min(n - n_test);
    let mut order = ids.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = order.split_off(n_test + n_val);
    let val = order.split_off(n_test);
    DatasetSplit { train, val, test: order, seed }
}

impl DatasetSplit {
    pub fn to_text(&self) -> String {
        let mut s = format!("# seed {}\n", self.seed);
        for (name, ids) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            let _ = writeln!(s, "[{name}]");
            for id in ids {
                let _ = writeln!(s, "{id}");
            }
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut split = DatasetSplit { train: vec![], val: vec![], test: vec![], seed: 0 };
        let mut section: Option<&mut Vec<String>> = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(seed) = line.strip_prefix("# seed ") {
                split.seed = seed.trim().parse().map_err(|e| Error::parse(path, format!("line {}: {e}", n + 1)))?;
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            section = match line {
                "[train]" => Some(&mut split.train),
                "[val]" => Some(&mut split.val),
                "[test]" => Some(&mut split.test),
                id => {
                    let Some(list) = section else {
                        return Err(Error::parse(path, format!("line {}: id before any section", n + 1)));
                    };
                    list.push(id.to_string());
                    Some(list)
                }
            };
        }
        Ok(split)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}
