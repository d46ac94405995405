//! Lightweight condition adapter.
//!
//! Maps the stacked `T×H×W×5` pixel/depth/mask condition to a feature map
//! on the latent grid, which is added to the noisy latent before token
//! embedding. Layout: three 3×3×3 conv stages, each followed by SiLU and a
//! 2×2 spatial average pool, with the codec's temporal grouping after the
//! third pool, then a zero-initialised 3×3×3 conv to the latent width.

use rand::Rng;

use crate::conditioning::{ConditionBundle, CONDITION_CHANNELS};
use crate::error::{MfmError, Result};
use crate::latents::{latent_dims, temporal_groups, LatentGrid, VideoTensor};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::tape::{Grid, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdapterConfig {
    pub in_channels: usize,
    pub hidden: usize,
    pub out_channels: usize,
}

impl AdapterConfig {
    /// Hidden width `c/4` (at least 1) for latent width `c`.
    pub fn for_latent(out_channels: usize) -> Self {
        Self {
            in_channels: CONDITION_CHANNELS,
            hidden: (out_channels / 4).max(1),
            out_channels,
        }
    }

    /// Parameter count without allocating weights.
    pub fn parameter_count(&self) -> usize {
        let conv = |cin: usize, cout: usize| 27 * cin * cout + cout;
        conv(self.in_channels, self.hidden)
            + 2 * conv(self.hidden, self.hidden)
            + conv(self.hidden, self.out_channels)
    }
}

#[derive(Clone, Debug)]
struct Conv {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct Adapter {
    config: AdapterConfig,
    convs: [Conv; 4],
}

impl Adapter {
    pub fn new(config: AdapterConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Self {
        let widths = [
            (config.in_channels, config.hidden),
            (config.hidden, config.hidden),
            (config.hidden, config.hidden),
            (config.hidden, config.out_channels),
        ];
        let convs = std::array::from_fn(|i| {
            let (cin, cout) = widths[i];
            let init = if i == 3 { Init::Zeros } else { Init::FanIn(27 * cin) };
            Conv {
                weight: store.register(format!("adapter.conv{i}.weight"), &[3, 3, 3, cin, cout], init, rng),
                bias: store.register(format!("adapter.conv{i}.bias"), &[cout], Init::Zeros, rng),
            }
        });
        Self { config, convs }
    }

    pub fn config(&self) -> &AdapterConfig {
        &self.config
    }

    /// Adapter output on the tape as a `(t·h·w) × c` matrix.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, stacked: &VideoTensor) -> Result<(Var, Grid)> {
        if stacked.channels != self.config.in_channels {
            return Err(MfmError::shape(
                format!("{} condition channels", self.config.in_channels),
                format!("{}", stacked.channels),
            ));
        }
        let (lt, lh, lw) = latent_dims(stacked.frames, stacked.height, stacked.width)?;
        let mut grid = Grid::new(stacked.frames, stacked.height, stacked.width);
        let mut x = tape.constant(
            grid.cells(),
            stacked.channels,
            stacked.data.iter().map(|&v| v as f64).collect(),
        );
        for (i, conv) in self.convs.iter().enumerate() {
            x = tape.conv3d(x, bound.var(conv.weight), grid);
            x = tape.add_row(x, bound.var(conv.bias));
            if i == 3 {
                break;
            }
            x = tape.silu(x);
            x = tape.avg_pool2(x, grid);
            grid = Grid::new(grid.t, grid.h / 2, grid.w / 2);
            if i == 2 {
                x = tape.temporal_group(x, grid, temporal_groups(grid.t)?);
                grid = Grid::new(lt, grid.h, grid.w);
            }
        }
        debug_assert_eq!((grid.t, grid.h, grid.w), (lt, lh, lw));
        tape.check_finite(x, "adapter output")?;
        Ok((x, grid))
    }

    /// Feature map for a bundle, evaluated without gradients.
    pub fn adapt(&self, store: &ParamStore, bundle: &ConditionBundle) -> Result<LatentGrid> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let (y, grid) = self.forward(&mut tape, &bound, &bundle.stacked())?;
        LatentGrid::from_vec(grid.t, grid.h, grid.w, self.config.out_channels, tape.value(y).to_vec())
    }
}

/// Adds the adapter feature to the latent video feature.
pub fn inject(latent: &LatentGrid, feature: &LatentGrid) -> Result<LatentGrid> {
    latent.zip_map(feature, |a, b| a + b)
}
