use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::{read_file, write_file_atomic};

/// Train/validation/test proportions of 480/120/120 cases.
pub const DEFAULT_FRACTIONS: [f64; 3] = [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0];

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn get(&self, name: &str) -> Option<&[String]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Seeded shuffle, then contiguous partition. Train and validation sizes are
/// `floor(fraction * n)`; the remainder goes to test.
pub fn split_dataset(ids: &[String], fractions: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if ids.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 ids to split, got {}",
            ids.len()
        )));
    }
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be non-negative and sum to 1, got {fractions:?}"
        )));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = ids.len() as f64;
    // the epsilon keeps exact products such as 720 * 2/3 from flooring down
    let mut n_train = ((fractions[0] * n + 1e-9).floor() as usize).min(ids.len());
    let mut n_val = ((fractions[1] * n + 1e-9).floor() as usize).min(ids.len() - n_train);
    // tiny sets still get one validation and one test slice when asked for
    if fractions[1] > 0.0 && n_val == 0 {
        n_val = 1;
        n_train = n_train.min(ids.len() - 1);
    }
    if fractions[2] > 0.0 && n_train + n_val == ids.len() && n_train > 1 {
        n_train -= 1;
    }
    let test = shuffled.split_off(n_train + n_val);
    let val = shuffled.split_off(n_train);
    Ok(DatasetSplit {
        train: shuffled,
        val,
        test,
    })
}

/// One `split<TAB>slice_id` line per slice.
pub fn write_split(split: &DatasetSplit, path: &Path) -> Result<()> {
    let mut text = String::new();
    for (name, ids) in [
        ("train", &split.train),
        ("val", &split.val),
        ("test", &split.test),
    ] {
        for id in ids {
            writeln!(text, "{name}\t{id}").expect("writing to a String");
        }
    }
    write_file_atomic(path, text.as_bytes())
}

pub fn read_split(path: &Path) -> Result<DatasetSplit> {
    let text = String::from_utf8(read_file(path)?)
        .map_err(|_| Error::Corrupt(format!("{} is not UTF-8", path.display())))?;
    let mut split = DatasetSplit::default();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let (name, id) = line.split_once('\t').ok_or_else(|| {
            Error::Corrupt(format!(
                "{} line {}: expected `split<TAB>id`",
                path.display(),
                i + 1
            ))
        })?;
        let bucket = match name {
            "train" => &mut split.train,
            "val" => &mut split.val,
            "test" => &mut split.test,
            other => {
                return Err(Error::Corrupt(format!(
                    "{} line {}: unknown split `{other}`",
                    path.display(),
                    i + 1
                )))
            }
        };
        bucket.push(id.to_string());
    }
    Ok(split)
}
