//! On-disk cache of tabulated solutions keyed by a hash of the setting, the
//! grid and the solver options.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{Order, WealthGrid};
use crate::setting::Setting;

use super::{solve_backward_with, Layout, PeriodTable, SolveOptions, Solution};

const MAGIC: &[u8; 4] = b"EISC";
const VERSION: u32 = 2;

/// Hex SHA-256 of the setting, grid nodes and layout options.
pub fn cache_key(setting: &Setting, grid: &WealthGrid, opts: &SolveOptions) -> Result<String> {
    let json = serde_json::to_vec(setting).map_err(|e| Error::Cache(e.to_string()))?;
    let mut h = Sha256::new();
    h.update(MAGIC);
    h.update(VERSION.to_le_bytes());
    h.update((json.len() as u64).to_le_bytes());
    h.update(&json);
    h.update(grid.shift().to_le_bytes());
    for x in grid.nodes() {
        h.update(x.to_le_bytes());
    }
    h.update((opts.tensor_layers as u64).to_le_bytes());
    h.update([opts.force_tensor as u8]);
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Loads the cached solution for this problem from `dir`, or solves and
/// stores it.
pub fn load_or_solve(dir: &Path, setting: &Setting, grid: &WealthGrid, opts: &SolveOptions) -> Result<Solution> {
    let path = entry_path(dir, setting, grid, opts)?;
    if path.exists() {
        return load(&path, setting);
    }
    let sol = solve_backward_with(setting, grid, opts)?;
    fs::create_dir_all(dir)?;
    store(&path, &sol)?;
    Ok(sol)
}

pub fn entry_path(dir: &Path, setting: &Setting, grid: &WealthGrid, opts: &SolveOptions) -> Result<PathBuf> {
    Ok(dir.join(format!("{}.bin", cache_key(setting, grid, opts)?)))
}

pub fn store(path: &Path, sol: &Solution) -> Result<()> {
    if sol.homothetic.is_some() {
        return Err(Error::Cache("only tabulated solutions are cached".into()));
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u64(&mut buf, VERSION as u64);
    match &sol.layout {
        Layout::Wealth => put_u64(&mut buf, 0),
        Layout::IncomeRatio => put_u64(&mut buf, 1),
        Layout::IncomeTensor { layers } => {
            put_u64(&mut buf, 2);
            put_f64s(&mut buf, layers);
        }
    }
    put_u64(&mut buf, sol.tables.len() as u64);
    for layers in &sol.tables {
        put_u64(&mut buf, layers.len() as u64);
        for t in layers {
            put_f64(&mut buf, t.p);
            put_grid(&mut buf, &t.cash);
            put_f64s(&mut buf, &t.value);
            put_f64s(&mut buf, &t.consumption);
            put_usizes(&mut buf, &t.portfolio);
            put_grid(&mut buf, &t.savings);
            put_f64s(&mut buf, &t.continuation);
            put_usizes(&mut buf, &t.continuation_portfolio);
            put_tail(&mut buf, t.value_tail);
            put_tail(&mut buf, t.continuation_tail);
        }
    }
    // write to a sibling file first so a crash never leaves a truncated entry
    let tmp = path.with_extension("tmp");
    fs::File::create(&tmp)?.write_all(&buf)?;
    fs::rename(tmp, path)?;
    Ok(())
}

/// Reads a cached entry. Aggregators are taken from `setting`, which must be
/// the setting the entry was built from.
pub fn load(path: &Path, setting: &Setting) -> Result<Solution> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Cache(format!("{} is not a cache entry", path.display())));
    }
    let version = r.u64()?;
    if version != VERSION as u64 {
        return Err(Error::Cache(format!("unsupported cache version {version}")));
    }
    let layout = match r.u64()? {
        0 => Layout::Wealth,
        1 => Layout::IncomeRatio,
        2 => Layout::IncomeTensor { layers: r.f64s()? },
        tag => return Err(Error::Cache(format!("unknown layout tag {tag}"))),
    };
    let horizon = r.u64()? as usize;
    if horizon != setting.horizon() {
        return Err(Error::Cache("cached horizon differs from the setting".into()));
    }
    let mut tables = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let n = r.u64()? as usize;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            layers.push(PeriodTable {
                p: r.f64()?,
                cash: r.grid()?,
                value: r.f64s()?,
                consumption: r.f64s()?,
                portfolio: r.usizes()?,
                savings: r.grid()?,
                continuation: r.f64s()?,
                continuation_portfolio: r.usizes()?,
                value_tail: r.tail()?,
                continuation_tail: r.tail()?,
            });
        }
        tables.push(layers);
    }
    if r.pos != bytes.len() {
        return Err(Error::Cache("trailing bytes in cache entry".into()));
    }
    Ok(Solution {
        layout,
        aggregators: setting.periods.iter().map(|p| p.aggregator.clone()).collect(),
        tables,
        homothetic: None,
    })
}

fn put_u64(buf: &mut Vec<u8>, x: u64) {
    buf.extend_from_slice(&x.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, x: f64) {
    buf.extend_from_slice(&x.to_le_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, xs: &[f64]) {
    put_u64(buf, xs.len() as u64);
    xs.iter().for_each(|&x| put_f64(buf, x));
}

fn put_usizes(buf: &mut Vec<u8>, xs: &[usize]) {
    put_u64(buf, xs.len() as u64);
    xs.iter().for_each(|&x| put_u64(buf, x as u64));
}

fn put_tail(buf: &mut Vec<u8>, tail: Option<f64>) {
    put_u64(buf, tail.is_some() as u64);
    put_f64(buf, tail.unwrap_or(0.0));
}

fn put_grid(buf: &mut Vec<u8>, g: &WealthGrid) {
    put_f64(buf, g.shift());
    put_f64s(buf, g.nodes());
    put_u64(buf, matches!(g.order(), Order::Linear) as u64);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Cache("truncated cache entry".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()? as usize;
        if n > (self.bytes.len() - self.pos) / 8 {
            return Err(Error::Cache("corrupt length in cache entry".into()));
        }
        Ok(n)
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }

    fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.len()?;
        (0..n).map(|_| Ok(self.u64()? as usize)).collect()
    }

    fn tail(&mut self) -> Result<Option<f64>> {
        let present = self.u64()?;
        let slope = self.f64()?;
        Ok((present == 1).then_some(slope))
    }

    fn grid(&mut self) -> Result<WealthGrid> {
        let shift = self.f64()?;
        let grid = WealthGrid::from_nodes(self.f64s()?, shift)?;
        let order = match self.u64()? {
            0 => Order::Cubic,
            1 => Order::Linear,
            tag => return Err(Error::Cache(format!("unknown interpolation order {tag}"))),
        };
        Ok(grid.with_order(order))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregator::Aggregator;
    use crate::certainty::CertaintyEquivalent;
    use crate::setting::{Period, Portfolio, StateSpace, TerminalUtility};

    fn setting(gamma: f64) -> Setting {
        Setting::stationary(
            2,
            Period {
                aggregator: Aggregator::epstein_zin(0.9, 0.7).unwrap(),
                ce: CertaintyEquivalent::crra(gamma),
                states: StateSpace::uniform(2),
                portfolios: vec![Portfolio::new("stock", vec![0.9, 1.25])],
            },
            TerminalUtility::linear(1.0),
        )
    }

    #[test]
    fn round_trip_and_key_sensitivity() {
        let dir = tempfile::tempdir().unwrap();
        let grid = WealthGrid::log_spaced(0.1, 10.0, 16).unwrap();
        let opts = SolveOptions::default();
        let s = setting(3.0);
        let first = load_or_solve(dir.path(), &s, &grid, &opts).unwrap();
        let path = entry_path(dir.path(), &s, &grid, &opts).unwrap();
        assert!(path.exists());
        let again = load(&path, &s).unwrap();
        assert_eq!(first.tables, again.tables);
        assert_eq!(first.layout, again.layout);
        assert_ne!(
            cache_key(&s, &grid, &opts).unwrap(),
            cache_key(&setting(3.5), &grid, &opts).unwrap()
        );
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        fs::write(&path, b"EISCjunk").unwrap();
        assert!(matches!(load(&path, &setting(2.0)), Err(Error::Cache(_))));
    }
}
