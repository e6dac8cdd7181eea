use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::bundle::{read_json, write_json};
use crate::dataio::LabeledDataset;
use crate::{Error, Result};

const NEIGHBOURS: usize = 4;

/// Ordered channel names with 2-D or 3-D positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Montage {
    pub channels: Vec<String>,
    pub coords: Vec<Vec<f64>>,
}

impl Montage {
    pub fn new(channels: Vec<String>, coords: Vec<Vec<f64>>) -> Result<Self> {
        let m = Self { channels, coords };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.coords.len() != self.channels.len() {
            return Err(Error::Shape {
                field: "coords".into(),
                expected: self.channels.len(),
                found: self.coords.len(),
            });
        }
        for (i, c) in self.coords.iter().enumerate() {
            if !(c.len() == 2 || c.len() == 3) || c.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(
                    "coords",
                    format!("channel {i} needs 2 or 3 finite coordinates"),
                ));
            }
        }
        Ok(())
    }

    fn distance(&self, a: usize, b: usize) -> f64 {
        let at = |v: &[f64], k: usize| v.get(k).copied().unwrap_or(0.0);
        (0..3)
            .map(|k| (at(&self.coords[a], k) - at(&self.coords[b], k)).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// The four closest other channels, ties broken by channel index.
    fn neighbours(&self, ch: usize) -> Vec<usize> {
        let mut others: Vec<usize> = (0..self.channels.len()).filter(|&o| o != ch).collect();
        others.sort_by(|&a, &b| {
            self.distance(ch, a)
                .total_cmp(&self.distance(ch, b))
                .then(a.cmp(&b))
        });
        others.truncate(NEIGHBOURS);
        others
    }
}

pub fn load_montage(path: impl AsRef<Path>) -> Result<Montage> {
    let m: Montage = read_json(path.as_ref())?;
    m.validate()?;
    Ok(m)
}

pub fn save_montage(montage: &Montage, path: impl AsRef<Path>) -> Result<()> {
    montage.validate()?;
    write_json(path.as_ref(), montage)
}

/// Each channel minus the mean of its neighbours: the four nearest by montage
/// distance, or every other channel when no montage is given.
pub fn surface_laplacian(
    dataset: &LabeledDataset,
    montage: Option<&Montage>,
) -> Result<LabeledDataset> {
    let (c, t) = (dataset.n_channels(), dataset.n_samples());
    if c < NEIGHBOURS {
        return Err(Error::Geometry {
            channels: c,
            samples: t,
            message: format!("surface Laplacian needs at least {NEIGHBOURS} channels"),
        });
    }
    let neighbours: Vec<Vec<usize>> = match montage {
        Some(m) => {
            m.validate()?;
            if m.channels.len() != c {
                return Err(Error::Shape {
                    field: "montage.channels".into(),
                    expected: c,
                    found: m.channels.len(),
                });
            }
            (0..c).map(|ch| m.neighbours(ch)).collect()
        }
        None => (0..c)
            .map(|ch| (0..c).filter(|&o| o != ch).collect())
            .collect(),
    };
    let mut out = vec![0f32; dataset.trials().len()];
    for (src, dst) in dataset
        .trials()
        .chunks_exact(c * t)
        .zip(out.chunks_exact_mut(c * t))
    {
        for (ch, nb) in neighbours.iter().enumerate() {
            let n = nb.len() as f64;
            for s in 0..t {
                let mean = nb.iter().map(|&o| f64::from(src[o * t + s])).sum::<f64>() / n;
                dst[ch * t + s] = (f64::from(src[ch * t + s]) - mean) as f32;
            }
        }
    }
    dataset.with_trials(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::tests::toy;

    fn grid() -> Montage {
        let coords = (0..6)
            .map(|i| vec![(i % 3) as f64, (i / 3) as f64])
            .collect();
        Montage::new((0..6).map(|i| format!("E{i}")).collect(), coords).unwrap()
    }

    fn rebuilt(d: &LabeledDataset, f: impl Fn(usize, usize) -> f32) -> LabeledDataset {
        let (c, t) = (d.n_channels(), d.n_samples());
        let v = (0..d.trials().len()).map(|j| f((j / t) % c, j)).collect();
        d.with_trials(v).unwrap()
    }

    #[test]
    fn spatially_constant_signal_vanishes() {
        let d = toy(2, 2, 2, 6, 5);
        let constant = rebuilt(&d, |_, j| ((j % 5) as f32) * 0.5 - 1.0);
        for m in [None, Some(grid())] {
            let out = surface_laplacian(&constant, m.as_ref()).unwrap();
            assert!(out.trials().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn too_few_channels() {
        let d = toy(2, 2, 2, 3, 5);
        assert!(matches!(
            surface_laplacian(&d, None),
            Err(Error::Geometry { channels: 3, .. })
        ));
    }

    #[test]
    fn linear_and_blind_to_common_mode() {
        let d = toy(2, 2, 2, 6, 5);
        let x = rebuilt(&d, |c, j| ((j * 7 + c) % 11) as f32 * 0.25);
        let y = rebuilt(&d, |c, j| ((j * 3 + 2 * c) % 5) as f32 * 0.5);
        let m = grid();
        let combo = rebuilt(&d, |_, j| 2.0 * x.trials()[j] - 0.5 * y.trials()[j]);
        let lx = surface_laplacian(&x, Some(&m)).unwrap();
        let ly = surface_laplacian(&y, Some(&m)).unwrap();
        let lc = surface_laplacian(&combo, Some(&m)).unwrap();
        for j in 0..lc.trials().len() {
            let expect = 2.0 * f64::from(lx.trials()[j]) - 0.5 * f64::from(ly.trials()[j]);
            assert!((f64::from(lc.trials()[j]) - expect).abs() < 1e-5);
        }
        let shifted = rebuilt(&d, |_, j| x.trials()[j] + (j % 5) as f32);
        let ls = surface_laplacian(&shifted, Some(&m)).unwrap();
        for (a, b) in ls.trials().iter().zip(lx.trials()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn nearest_neighbours_on_grid() {
        // Corner E0 at (0,0): E1 and E3 at distance 1, then E4 (√2), then E2 (2).
        assert_eq!(grid().neighbours(0), vec![1, 3, 4, 2]);
    }

    #[test]
    fn montage_file_round_trip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("montage.json");
        save_montage(&grid(), &path).unwrap();
        assert_eq!(load_montage(&path).unwrap(), grid());
        let d = toy(2, 2, 2, 5, 5);
        assert!(surface_laplacian(&d, Some(&grid())).is_err());
        assert!(Montage::new(vec!["a".into()], vec![]).is_err());
    }
}
