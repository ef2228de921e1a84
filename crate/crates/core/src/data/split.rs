use crate::error::{Error, Result};
use crate::seed;

use super::manifest::{DatasetManifest, Split, SplitFiles};

/// Train : validation : test percentages used for the published experiments.
pub const PUBLISHED_SPLIT_RATIOS: [f64; 3] = [98.816, 0.038, 1.146];

fn validate(ratios: &[f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::Parameter(format!("split ratios must be non-negative, got {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 100.0).abs() > 1e-3 {
        return Err(Error::Parameter(format!("split ratios must sum to 100, got {sum}")));
    }
    Ok(())
}

/// Largest-remainder apportionment of `total` items to the three splits.
/// Ties in the remainder go to the earlier split.
pub fn split_targets(total: usize, ratios: &[f64; 3]) -> Result<[usize; 3]> {
    validate(ratios)?;
    let exact: Vec<f64> = ratios.iter().map(|r| total as f64 * r / 100.0).collect();
    let mut out = [0usize; 3];
    for (o, e) in out.iter_mut().zip(&exact) {
        *o = e.floor() as usize;
    }
    let left = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &s in order.iter().take(left) {
        out[s] += 1;
    }
    Ok(out)
}

/// Per-class split sizes whose row sums are the class sizes, whose column
/// sums are [`split_targets`] of the total, and whose every cell is the
/// proportional share rounded down or up.
fn allocate(class_sizes: &[usize], ratios: &[f64; 3]) -> Result<Vec<[usize; 3]>> {
    let total: usize = class_sizes.iter().sum();
    let targets = split_targets(total, ratios)?;
    let exact: Vec<[f64; 3]> = class_sizes.iter().map(|&n| ratios.map(|r| n as f64 * r / 100.0)).collect();
    let mut cells: Vec<[usize; 3]> = exact.iter().map(|row| row.map(|v| v.floor() as usize)).collect();
    let mut col_deficit: Vec<isize> =
        (0..3).map(|s| targets[s] as isize - cells.iter().map(|row| row[s] as isize).sum::<isize>()).collect();
    let mut rows: Vec<(usize, usize)> =
        class_sizes.iter().enumerate().map(|(c, &n)| (c, n - cells[c].iter().sum::<usize>())).collect();
    // Larger row deficits first, each taking the splits with the most
    // outstanding demand; this greedy always finds a 0/1 completion.
    rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    for (c, deficit) in rows {
        let mut cols: Vec<usize> = (0..3).collect();
        cols.sort_by(|&a, &b| {
            col_deficit[b]
                .cmp(&col_deficit[a])
                .then((exact[c][b] - exact[c][b].floor()).total_cmp(&(exact[c][a] - exact[c][a].floor())))
                .then(a.cmp(&b))
        });
        for &s in cols.iter().take(deficit) {
            cells[c][s] += 1;
            col_deficit[s] -= 1;
        }
    }
    if col_deficit.iter().any(|&d| d != 0) {
        return Err(Error::Contract(format!("split allocation left deficits {col_deficit:?}")));
    }
    Ok(cells)
}

/// Pools every file of the manifest and reassigns it to train/val/test in
/// the given percentages. Each class is shuffled with a seed derived from
/// `seed` and its index, then cut in split order.
pub fn split_dataset(manifest: &DatasetManifest, ratios: [f64; 3], seed: u64) -> Result<DatasetManifest> {
    use rand::seq::SliceRandom;

    let pooled: Vec<_> = (0..manifest.num_classes()).map(|c| manifest.class_files(c)).collect();
    let sizes: Vec<usize> = pooled.iter().map(Vec::len).collect();
    let cells = allocate(&sizes, &ratios)?;
    let mut splits: [SplitFiles; 3] = Default::default();
    for split in &mut splits {
        split.files = vec![Vec::new(); manifest.num_classes()];
    }
    for (c, mut files) in pooled.into_iter().enumerate() {
        files.shuffle(&mut seed::rng(seed::mix(seed, c as u64)));
        let mut rest = files.as_slice();
        for split in Split::ALL {
            let (head, tail) = rest.split_at(cells[c][split.index()]);
            let mut part = head.to_vec();
            part.sort();
            splits[split.index()].files[c] = part;
            rest = tail;
        }
    }
    Ok(DatasetManifest {
        root: manifest.root.clone(),
        classes: manifest.classes.clone(),
        splits,
        warnings: manifest.warnings.clone(),
    })
}
