//! Architecture families and their committed layer configurations.
//!
//! All three families open with a spatial convolution (`C -> filters`, no
//! bias) followed by temporal convolution, i.e. the first block is a
//! factorised space-time filter. Widths below are the committed desk-scale
//! defaults; they scale the temporal kernels and pools with the trial
//! length `T`.
//!
//! | family     | blocks                                                                   |
//! |------------|--------------------------------------------------------------------------|
//! | eegnet     | spatial (F1*D) -> depthwise temporal -> ELU -> avg/4 -> drop -> depthwise temporal -> pointwise (F2) -> ELU -> avg/8 -> drop -> dense |
//! | deepcnn    | spatial (F) -> temporal (F) -> ELU -> max/3 -> drop -> [conv (2F, 4F) -> ELU -> max/3 -> drop] x2 -> dense |
//! | shallowcnn | spatial (F) -> temporal (F, long kernel) -> square -> avg pool -> log -> drop -> dense |

use serde::{Deserialize, Serialize};

use super::layers::Layer;
use crate::{Error, Result};

/// Version tag written into persisted model metadata.
pub const ARCHITECTURE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Eegnet,
    Deepcnn,
    Shallowcnn,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Eegnet, Family::Deepcnn, Family::Shallowcnn];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Eegnet => "eegnet",
            Family::Deepcnn => "deepcnn",
            Family::Shallowcnn => "shallowcnn",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eegnet" => Ok(Family::Eegnet),
            "deepcnn" | "deep" => Ok(Family::Deepcnn),
            "shallowcnn" | "shallow" => Ok(Family::Shallowcnn),
            other => Err(Error::invalid(
                "model",
                format!("unknown model family `{other}`"),
            )),
        }
    }
}

/// Width and regularisation knobs. `None` means "derive from geometry".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub filters: usize,
    pub depth_multiplier: usize,
    pub temporal_kernel: Option<usize>,
    pub dropout: f64,
}

impl Hyper {
    pub fn defaults(family: Family) -> Self {
        match family {
            Family::Eegnet => Hyper {
                filters: 8,
                depth_multiplier: 2,
                temporal_kernel: None,
                dropout: 0.25,
            },
            Family::Deepcnn => Hyper {
                filters: 8,
                depth_multiplier: 1,
                temporal_kernel: None,
                dropout: 0.25,
            },
            Family::Shallowcnn => Hyper {
                filters: 8,
                depth_multiplier: 1,
                temporal_kernel: None,
                dropout: 0.25,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub family: Family,
    pub n_channels: usize,
    pub n_samples: usize,
    pub n_outputs: usize,
    pub hyper: Hyper,
}

impl ArchitectureSpec {
    pub fn new(family: Family, n_channels: usize, n_samples: usize, n_outputs: usize) -> Self {
        Self {
            family,
            n_channels,
            n_samples,
            n_outputs,
            hyper: Hyper::defaults(family),
        }
    }

    fn geometry_error(&self, message: impl Into<String>) -> Error {
        Error::Geometry {
            channels: self.n_channels,
            samples: self.n_samples,
            message: message.into(),
        }
    }

    fn temporal_kernel(&self) -> usize {
        self.hyper.temporal_kernel.unwrap_or(match self.family {
            Family::Eegnet => (self.n_samples / 16).clamp(4, 64),
            Family::Deepcnn => (self.n_samples / 25).clamp(2, 10),
            Family::Shallowcnn => (self.n_samples / 10).clamp(4, 25),
        })
    }

    /// Lower the spec to a layer list, assigning parameter offsets.
    pub(crate) fn layers(&self) -> Result<(Vec<Layer>, usize)> {
        if self.n_outputs < 2 {
            return Err(Error::invalid("n_outputs", "need at least two outputs"));
        }
        if self.n_channels == 0 || self.n_samples == 0 {
            return Err(self.geometry_error("geometry must be positive"));
        }
        if self.hyper.filters == 0 || self.hyper.depth_multiplier == 0 {
            return Err(Error::invalid("hyper", "widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.hyper.dropout) {
            return Err(Error::invalid("hyper.dropout", "must lie in [0, 1)"));
        }
        let mut b = Builder::new(self.n_channels, self.n_samples);
        let h = &self.hyper;
        let k = self.temporal_kernel();
        match self.family {
            Family::Eegnet => {
                let maps = h.filters * h.depth_multiplier;
                b.conv(maps, 1, 1, false, false);
                b.conv(maps, k, maps, false, true);
                b.push(Layer::Elu);
                b.avg_pool(4, 4).map_err(|m| self.geometry_error(m))?;
                b.dropout(h.dropout);
                b.conv(maps, 8.min(b.cols), maps, false, true);
                b.conv(maps, 1, 1, false, false);
                b.push(Layer::Elu);
                b.avg_pool(8, 8).map_err(|m| self.geometry_error(m))?;
                b.dropout(h.dropout);
            }
            Family::Deepcnn => {
                let f = h.filters;
                b.conv(f, 1, 1, false, false);
                for width in [f, 2 * f, 4 * f] {
                    if b.cols < k {
                        return Err(
                            self.geometry_error("trial too short for the deepcnn pooling stack")
                        );
                    }
                    b.conv(width, k, 1, true, false);
                    b.push(Layer::Elu);
                    b.max_pool(3, 3).map_err(|m| self.geometry_error(m))?;
                    b.dropout(h.dropout);
                }
            }
            Family::Shallowcnn => {
                let f = h.filters;
                if self.n_samples < 32 {
                    return Err(self.geometry_error("shallowcnn needs at least 32 samples"));
                }
                b.conv(f, 1, 1, false, false);
                b.conv(f, k, 1, true, false);
                b.push(Layer::Square);
                let lin = b.cols;
                let size = (self.n_samples * 75 / 1000).clamp(2, lin);
                let stride = (size / 5).max(1);
                b.avg_pool(size, stride)
                    .map_err(|m| self.geometry_error(m))?;
                b.push(Layer::Log { floor: 1e-6 });
                b.dropout(h.dropout);
            }
        }
        b.dense(self.n_outputs);
        Ok((b.layers, b.n_params))
    }
}

struct Builder {
    rows: usize,
    cols: usize,
    n_params: usize,
    layers: Vec<Layer>,
}

impl Builder {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            n_params: 0,
            layers: Vec::new(),
        }
    }

    fn push(&mut self, layer: Layer) {
        self.n_params += layer.n_params();
        self.layers.push(layer);
    }

    fn conv(&mut self, cout: usize, kernel: usize, groups: usize, bias: bool, same: bool) {
        let pad_total = if same { kernel - 1 } else { 0 };
        let pad_left = pad_total / 2;
        let lout = self.cols + pad_total - kernel + 1;
        let w_off = self.n_params;
        let n_w = cout * (self.rows / groups) * kernel;
        let layer = Layer::Conv {
            cin: self.rows,
            cout,
            kernel,
            groups,
            pad_left,
            lin: self.cols,
            lout,
            w_off,
            b_off: bias.then_some(w_off + n_w),
        };
        self.push(layer);
        self.rows = cout;
        self.cols = lout;
    }

    fn avg_pool(&mut self, size: usize, stride: usize) -> std::result::Result<(), String> {
        let lout = self.pool_len(size, stride)?;
        self.push(Layer::AvgPool {
            rows: self.rows,
            lin: self.cols,
            size,
            stride,
            lout,
        });
        self.cols = lout;
        Ok(())
    }

    fn max_pool(&mut self, size: usize, stride: usize) -> std::result::Result<(), String> {
        let lout = self.pool_len(size, stride)?;
        self.push(Layer::MaxPool {
            rows: self.rows,
            lin: self.cols,
            size,
            stride,
            lout,
        });
        self.cols = lout;
        Ok(())
    }

    fn pool_len(&self, size: usize, stride: usize) -> std::result::Result<usize, String> {
        if self.cols < size {
            return Err(format!(
                "pooled length {} is smaller than pool size {size}",
                self.cols
            ));
        }
        Ok((self.cols - size) / stride + 1)
    }

    fn dropout(&mut self, p: f64) {
        if p > 0.0 {
            self.push(Layer::Dropout { p });
        }
    }

    fn dense(&mut self, n_out: usize) {
        let n_in = self.rows * self.cols;
        let w_off = self.n_params;
        self.push(Layer::Dense {
            n_in,
            n_out,
            w_off,
            b_off: w_off + n_in * n_out,
        });
        self.rows = 1;
        self.cols = n_out;
    }
}
