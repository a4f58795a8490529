//! Gittins tables shared across commands, optionally cached on disk.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::{Context, Result};
use bandit_trials::gittins::{compute_index_table, load_index_table, parse_index_table, DpConfig, GittinsTable};

/// Environment variable naming the on-disk table cache.
pub const TABLE_DIR_ENV: &str = "BANDIT_TRIALS_TABLE_DIR";

/// File name of a cached table.
pub fn table_file_name(discount: f64, n_max: usize) -> String {
    format!("gittins_d{discount}_n{n_max}.csv")
}

/// Looks tables up in memory, then in the cache directory, and computes
/// them only when neither has one covering the requested `n`.
#[derive(Debug)]
pub struct TableCache {
    dir: Option<PathBuf>,
    dp: DpConfig,
    loaded: Mutex<HashMap<u64, Arc<GittinsTable>>>,
}

impl TableCache {
    pub fn new(dir: Option<PathBuf>, dp: DpConfig) -> Self {
        Self { dir, dp, loaded: Mutex::new(HashMap::new()) }
    }

    /// Cache directory from [`TABLE_DIR_ENV`], default DP settings.
    pub fn from_env() -> Self {
        Self::new(std::env::var_os(TABLE_DIR_ENV).map(PathBuf::from), DpConfig::default())
    }

    pub fn get(&self, discount: f64, n_min: usize) -> Result<Arc<GittinsTable>> {
        let key = discount.to_bits();
        if let Some(t) = self.loaded.lock().unwrap().get(&key) {
            if t.n_max() >= n_min {
                return Ok(t.clone());
            }
        }
        let table = match self.find_on_disk(discount, n_min)? {
            Some(t) => t,
            None => {
                let computed = compute_index_table(discount, n_min, &self.dp)
                    .with_context(|| format!("computing Gittins table d={discount} n_max={n_min}"))?;
                // Use the serialized values so a run gives the same numbers
                // whether its table was just built or read from the cache.
                let t = parse_index_table(&computed.to_csv_string())?;
                if let Some(dir) = &self.dir {
                    std::fs::create_dir_all(dir)?;
                    t.save(dir.join(table_file_name(discount, n_min)))?;
                }
                t
            }
        };
        let table = Arc::new(table);
        self.loaded.lock().unwrap().insert(key, table.clone());
        Ok(table)
    }

    fn find_on_disk(&self, discount: f64, n_min: usize) -> Result<Option<GittinsTable>> {
        let Some(dir) = &self.dir else { return Ok(None) };
        let Ok(entries) = std::fs::read_dir(dir) else { return Ok(None) };
        let prefix = format!("gittins_d{discount}_n");
        let mut best: Option<(usize, PathBuf)> = None;
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().into_owned();
            let n = name.strip_prefix(&prefix).and_then(|r| r.strip_suffix(".csv")).and_then(|r| r.parse().ok());
            if let Some(n) = n {
                if n >= n_min && best.as_ref().is_none_or(|(b, _)| n < *b) {
                    best = Some((n, entry.path()));
                }
            }
        }
        match best {
            Some((_, path)) => Ok(Some(load(&path, discount)?)),
            None => Ok(None),
        }
    }
}

fn load(path: &Path, discount: f64) -> Result<GittinsTable> {
    let t = load_index_table(path).with_context(|| format!("loading {}", path.display()))?;
    anyhow::ensure!(t.discount() == discount, "{} holds discount {}, expected {discount}", path.display(), t.discount());
    Ok(t)
}
