//! Layer-stack descriptors.
//!
//! An architecture is a comma-separated list of layer tokens:
//!
//! | token          | layer                                                  |
//! |----------------|--------------------------------------------------------|
//! | `conv3x3:16`   | zero-padded convolution, 16 output channels, stride 1  |
//! | `conv3x3:16/2` | same with stride 2                                     |
//! | `relu`         | rectifier                                              |
//! | `pool1x2`      | non-overlapping max pool (rows × time)                 |
//! | `flatten`      | spatial → vector                                       |
//! | `dense:256`    | fully connected                                        |
//! | `dense:2k`     | fully connected with two logits per candidate pair     |
//! | `heads`        | reshape to `K × 2` and softmax each row                |

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Width {
    Fixed(usize),
    /// `2K` logits.
    Heads,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        kernel_h: usize,
        kernel_w: usize,
        channels: usize,
        stride: usize,
    },
    Relu,
    MaxPool {
        pool_h: usize,
        pool_w: usize,
    },
    Flatten,
    Dense {
        width: Width,
    },
    Heads,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub layers: Vec<LayerSpec>,
}

pub const DEFAULT_ARCH: &str =
    "conv3x3:16,relu,conv3x3:32,relu,pool1x2,conv3x3:64,relu,flatten,dense:256,relu,dense:2k,heads";

impl Default for Architecture {
    fn default() -> Self {
        DEFAULT_ARCH.parse().expect("default architecture parses")
    }
}

impl Architecture {
    /// The default stack with every channel count and hidden width replaced.
    pub fn scaled(conv_channels: [usize; 3], hidden: usize) -> Self {
        format!(
            "conv3x3:{},relu,conv3x3:{},relu,pool1x2,conv3x3:{},relu,flatten,dense:{hidden},relu,dense:2k,heads",
            conv_channels[0], conv_channels[1], conv_channels[2]
        )
        .parse()
        .expect("scaled architecture parses")
    }

    /// Checks layer ordering: spatial layers, one flatten, dense layers, then
    /// a `dense:2k` immediately followed by `heads`.
    pub fn validate(&self) -> Result<()> {
        let n = self.layers.len();
        if n < 2
            || self.layers[n - 1] != LayerSpec::Heads
            || self.layers[n - 2] != (LayerSpec::Dense { width: Width::Heads })
        {
            return Err(Error::invalid(format!(
                "architecture `{self}` must end with dense:2k,heads"
            )));
        }
        let mut flat = false;
        for (idx, layer) in self.layers[..n - 1].iter().enumerate() {
            match layer {
                LayerSpec::Conv {
                    kernel_h,
                    kernel_w,
                    channels,
                    stride,
                } => {
                    if flat {
                        return Err(Error::invalid(format!("conv after flatten at layer {idx}")));
                    }
                    if kernel_h % 2 == 0 || kernel_w % 2 == 0 || *channels == 0 || *stride == 0 {
                        return Err(Error::invalid(format!(
                            "conv at layer {idx} needs odd kernels and positive channels/stride"
                        )));
                    }
                }
                LayerSpec::MaxPool { pool_h, pool_w } => {
                    if flat || *pool_h == 0 || *pool_w == 0 {
                        return Err(Error::invalid(format!("bad pool at layer {idx}")));
                    }
                }
                LayerSpec::Flatten => {
                    if flat {
                        return Err(Error::invalid("more than one flatten"));
                    }
                    flat = true;
                }
                LayerSpec::Dense { width } => {
                    if !flat {
                        return Err(Error::invalid(format!("dense before flatten at layer {idx}")));
                    }
                    if *width == Width::Heads && idx != n - 2 {
                        return Err(Error::invalid("dense:2k must be the last dense layer"));
                    }
                    if *width == Width::Fixed(0) {
                        return Err(Error::invalid("dense width must be positive"));
                    }
                }
                LayerSpec::Relu => {}
                LayerSpec::Heads => return Err(Error::invalid("heads must be the final layer")),
            }
        }
        Ok(())
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv {
                kernel_h,
                kernel_w,
                channels,
                stride,
            } => {
                write!(f, "conv{kernel_h}x{kernel_w}:{channels}")?;
                if *stride != 1 {
                    write!(f, "/{stride}")?;
                }
                Ok(())
            }
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::MaxPool { pool_h, pool_w } => write!(f, "pool{pool_h}x{pool_w}"),
            LayerSpec::Flatten => f.write_str("flatten"),
            LayerSpec::Dense {
                width: Width::Fixed(w),
            } => write!(f, "dense:{w}"),
            LayerSpec::Dense { width: Width::Heads } => f.write_str("dense:2k"),
            LayerSpec::Heads => f.write_str("heads"),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

fn parse_dims(s: &str, token: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .split_once('x')
        .ok_or_else(|| Error::invalid(format!("expected HxW in `{token}`")))?;
    Ok((parse_num(a, token)?, parse_num(b, token)?))
}

fn parse_num(s: &str, token: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::invalid(format!("bad number `{s}` in `{token}`")))
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(token: &str) -> Result<Self> {
        let t = token.trim();
        if let Some(rest) = t.strip_prefix("conv") {
            let (dims, tail) = rest
                .split_once(':')
                .ok_or_else(|| Error::invalid(format!("conv needs channels: `{t}`")))?;
            let (kernel_h, kernel_w) = parse_dims(dims, t)?;
            let (channels, stride) = match tail.split_once('/') {
                Some((c, s)) => (parse_num(c, t)?, parse_num(s, t)?),
                None => (parse_num(tail, t)?, 1),
            };
            return Ok(LayerSpec::Conv {
                kernel_h,
                kernel_w,
                channels,
                stride,
            });
        }
        if let Some(rest) = t.strip_prefix("pool") {
            let (pool_h, pool_w) = parse_dims(rest, t)?;
            return Ok(LayerSpec::MaxPool { pool_h, pool_w });
        }
        if let Some(rest) = t.strip_prefix("dense:") {
            let width = if rest.eq_ignore_ascii_case("2k") {
                Width::Heads
            } else {
                Width::Fixed(parse_num(rest, t)?)
            };
            return Ok(LayerSpec::Dense { width });
        }
        match t {
            "relu" => Ok(LayerSpec::Relu),
            "flatten" => Ok(LayerSpec::Flatten),
            "heads" => Ok(LayerSpec::Heads),
            _ => Err(Error::invalid(format!("unknown layer `{t}`"))),
        }
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let layers = s
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        let arch = Architecture { layers };
        arch.validate()?;
        Ok(arch)
    }
}
