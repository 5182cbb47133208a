//! Declarative layer specifications and their resolution into a concrete
//! plan of convolution units.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ops::{Activation, ConvWeights, CostTally};
use crate::tensor::Scalar;

/// Default contraction factor of the decoder bottlenecks.
pub const DEFAULT_DECODER_T: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKind {
    Conv,
    DwiseSep,
    Bottleneck,
    ResBottleneck,
    Upconcat,
    Sigmoid,
}

impl OperatorKind {
    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::Conv => "conv",
            OperatorKind::DwiseSep => "dwisesep",
            OperatorKind::Bottleneck => "bottleneck",
            OperatorKind::ResBottleneck => "resbottleneck",
            OperatorKind::Upconcat => "upconcat",
            OperatorKind::Sigmoid => "sigmoid",
        }
    }
}

/// Where an upconcat takes its skip connection from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipSource {
    /// The network input image.
    Input,
    /// Output of an earlier row (after its last repeat).
    Row(usize),
}

/// One row of the layer table: operator, expansion factor `t`, output
/// channels `c`, repeats `n` and stride `s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: OperatorKind,
    pub t: Option<f64>,
    pub c: usize,
    pub n: usize,
    pub s: usize,
    pub skip: Option<SkipSource>,
    pub activation: Activation,
}

impl LayerSpec {
    fn new(kind: OperatorKind, t: Option<f64>, c: usize, n: usize, s: usize) -> Self {
        Self {
            kind,
            t,
            c,
            n,
            s,
            skip: None,
            activation: Activation::Relu6,
        }
    }

    pub fn conv(c: usize, s: usize) -> Self {
        Self::new(OperatorKind::Conv, None, c, 1, s)
    }

    pub fn dwisesep(c: usize, s: usize) -> Self {
        Self::new(OperatorKind::DwiseSep, Some(1.0), c, 1, s)
    }

    pub fn bottleneck(t: f64, c: usize, n: usize, s: usize) -> Self {
        Self::new(OperatorKind::Bottleneck, Some(t), c, n, s)
    }

    pub fn resbottleneck(t: f64, c: usize, n: usize) -> Self {
        Self::new(OperatorKind::ResBottleneck, Some(t), c, n, 1)
    }

    pub fn upconcat(c: usize, skip: SkipSource) -> Self {
        Self {
            skip: Some(skip),
            ..Self::new(OperatorKind::Upconcat, None, c, 1, 1)
        }
    }

    pub fn sigmoid() -> Self {
        Self::new(OperatorKind::Sigmoid, None, 1, 1, 1)
    }
}

/// An ordered table of layer rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub name: String,
    pub in_channels: usize,
    pub rows: Vec<LayerSpec>,
}

/// `round_half_up(t · c_in)`, at least 1.
pub fn hidden_width(t: f64, c_in: usize) -> usize {
    // The small bias keeps products such as 0.15·30 = 4.5 from landing a
    // hair below the half.
    let h = (t * c_in as f64 + 0.5 + 1e-9).floor();
    (h as usize).max(1)
}

/// An inverted (t > 1) or contracting (t < 1) bottleneck:
/// 1×1 expand → 3×3 depthwise (stride s) → 1×1 linear projection, batch
/// norm after each convolution, optional identity shortcut.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BottleneckSpec {
    pub t: f64,
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
    pub residual: bool,
    pub hidden: usize,
    pub activation: Activation,
}

impl BottleneckSpec {
    pub fn new(t: f64, c_in: usize, c_out: usize, stride: usize, residual: bool) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::Config(format!(
                "expansion factor must be positive, got {t}"
            )));
        }
        if c_in == 0 || c_out == 0 {
            return Err(Error::Config(
                "bottleneck channel counts must be positive".into(),
            ));
        }
        if !(1..=2).contains(&stride) {
            return Err(Error::Config(format!(
                "stride must be 1 or 2, got {stride}"
            )));
        }
        if residual && (stride != 1 || c_in != c_out) {
            return Err(Error::Config(format!(
                "residual bottleneck needs stride 1 and c_in == c_out, got s={stride}, {c_in}->{c_out}"
            )));
        }
        Ok(Self {
            t,
            c_in,
            c_out,
            stride,
            residual,
            hidden: hidden_width(t, c_in),
            activation: Activation::Relu6,
        })
    }

    /// `(c_in·h + 2h) + (9h + 2h) + (h·c_out + 2·c_out)`.
    pub fn param_count(&self) -> u64 {
        let (ci, h, co) = (self.c_in as u64, self.hidden as u64, self.c_out as u64);
        (ci * h + 2 * h) + (9 * h + 2 * h) + (h * co + 2 * co)
    }
}

/// Geometry of one convolution + batch-norm (+ activation) unit.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitPlan {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub groups: usize,
    pub stride: usize,
    pub act: Option<Activation>,
}

impl UnitPlan {
    fn new(
        name: String,
        c_in: usize,
        c_out: usize,
        k: usize,
        groups: usize,
        stride: usize,
        act: Option<Activation>,
    ) -> Self {
        Self {
            name,
            c_in,
            c_out,
            k,
            groups,
            stride,
            act,
        }
    }

    pub fn padding(&self) -> usize {
        self.k / 2
    }

    pub fn zero_weights<T: Scalar>(&self) -> Result<ConvWeights<T>> {
        ConvWeights::zeros(
            self.c_out,
            self.c_in,
            self.k,
            self.groups,
            self.stride,
            self.padding(),
        )
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        [self.c_out, self.c_in / self.groups, self.k, self.k]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.padding();
        (
            (h + 2 * p - self.k) / self.stride + 1,
            (w + 2 * p - self.k) / self.stride + 1,
        )
    }

    /// Convolution multiply-adds on an `h × w` input plus conv and batch-norm
    /// parameters.
    pub fn cost(&self, h: usize, w: usize) -> CostTally {
        let (ho, wo) = self.output_hw(h, w);
        let madds = self.c_out * ho * wo * self.k * self.k * (self.c_in / self.groups);
        let params = self.c_out * (self.c_in / self.groups) * self.k * self.k + 2 * self.c_out;
        CostTally::new(madds as u64, params as u64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BlockPlan {
    Conv(UnitPlan),
    DwiseSep {
        dw: UnitPlan,
        pw: UnitPlan,
    },
    Bottleneck {
        spec: BottleneckSpec,
        expand: UnitPlan,
        dw: UnitPlan,
        project: UnitPlan,
    },
    Upconcat {
        skip: SkipSource,
        c_up: usize,
        c_skip: usize,
    },
    Sigmoid,
}

impl BlockPlan {
    pub fn units(&self) -> Vec<&UnitPlan> {
        match self {
            BlockPlan::Conv(u) => vec![u],
            BlockPlan::DwiseSep { dw, pw } => vec![dw, pw],
            BlockPlan::Bottleneck {
                expand,
                dw,
                project,
                ..
            } => vec![expand, dw, project],
            BlockPlan::Upconcat { .. } | BlockPlan::Sigmoid => vec![],
        }
    }
}

/// A resolved row: channel counts and spatial scale (input stride relative
/// to the network input) on both sides.
#[derive(Clone, Debug, PartialEq)]
pub struct RowPlan {
    pub spec: LayerSpec,
    pub c_in: usize,
    pub c_out: usize,
    pub in_scale: usize,
    pub out_scale: usize,
    pub encoder: bool,
    pub blocks: Vec<BlockPlan>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub in_channels: usize,
    pub rows: Vec<RowPlan>,
    /// Input height and width must be multiples of this.
    pub required_multiple: usize,
}

impl Plan {
    pub fn units(&self) -> impl Iterator<Item = &UnitPlan> {
        self.rows
            .iter()
            .flat_map(|r| r.blocks.iter())
            .flat_map(|b| b.units())
    }

    pub fn check_input(&self, channels: usize, h: usize, w: usize) -> Result<()> {
        if channels != self.in_channels {
            return Err(Error::Config(format!(
                "network expects {} input channels, got {channels}",
                self.in_channels
            )));
        }
        let m = self.required_multiple;
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::Config(format!(
                "input resolution {h}x{w} is not a positive multiple of {m}"
            )));
        }
        Ok(())
    }
}

impl GraphSpec {
    /// SHA-256 of the canonical JSON form of the spec.
    pub fn architecture_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("graph spec serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Resolves channel counts, scales and convolution units, checking the
    /// structural rules along the way.
    pub fn plan(&self) -> Result<Plan> {
        let first_upconcat = self
            .rows
            .iter()
            .position(|r| r.kind == OperatorKind::Upconcat)
            .unwrap_or(self.rows.len());
        let mut rows: Vec<RowPlan> = Vec::with_capacity(self.rows.len());
        let (mut c, mut scale) = (self.in_channels, 1usize);
        for (ri, spec) in self.rows.iter().enumerate() {
            if spec.n == 0 {
                return Err(Error::Config(format!(
                    "row {ri}: repeat count must be >= 1"
                )));
            }
            if !(1..=2).contains(&spec.s) {
                return Err(Error::Config(format!("row {ri}: stride must be 1 or 2")));
            }
            let encoder = ri < first_upconcat;
            let prefix = if encoder { "encoder" } else { "decoder" };
            let (c_in, in_scale) = (c, scale);
            let act = spec.activation;
            let unit = |rep: usize, part: &str, ci, co, k, groups, stride, act| {
                UnitPlan::new(
                    format!("{prefix}.{ri}.{rep}.{part}"),
                    ci,
                    co,
                    k,
                    groups,
                    stride,
                    act,
                )
            };
            let mut blocks = Vec::new();
            match spec.kind {
                OperatorKind::Conv => {
                    for rep in 0..spec.n {
                        let s = if rep == 0 { spec.s } else { 1 };
                        blocks.push(BlockPlan::Conv(unit(
                            rep,
                            "conv",
                            c,
                            spec.c,
                            3,
                            1,
                            s,
                            Some(act),
                        )));
                        c = spec.c;
                        scale *= s;
                    }
                }
                OperatorKind::DwiseSep => {
                    for rep in 0..spec.n {
                        let s = if rep == 0 { spec.s } else { 1 };
                        blocks.push(BlockPlan::DwiseSep {
                            dw: unit(rep, "dw", c, c, 3, c, s, Some(act)),
                            pw: unit(rep, "pw", c, spec.c, 1, 1, 1, None),
                        });
                        c = spec.c;
                        scale *= s;
                    }
                }
                OperatorKind::Bottleneck | OperatorKind::ResBottleneck => {
                    let t = spec
                        .t
                        .ok_or_else(|| Error::Config(format!("row {ri}: bottleneck needs t")))?;
                    let residual = spec.kind == OperatorKind::ResBottleneck;
                    for rep in 0..spec.n {
                        let s = if rep == 0 { spec.s } else { 1 };
                        let mut b = BottleneckSpec::new(t, c, spec.c, s, residual)
                            .map_err(|e| Error::Config(format!("row {ri}: {e}")))?;
                        b.activation = act;
                        let h = b.hidden;
                        blocks.push(BlockPlan::Bottleneck {
                            spec: b,
                            expand: unit(rep, "expand", c, h, 1, 1, 1, Some(act)),
                            dw: unit(rep, "dw", h, h, 3, h, s, Some(act)),
                            project: unit(rep, "project", h, spec.c, 1, 1, 1, None),
                        });
                        c = spec.c;
                        scale *= s;
                    }
                }
                OperatorKind::Upconcat => {
                    if spec.n != 1 {
                        return Err(Error::Config(format!("row {ri}: upconcat cannot repeat")));
                    }
                    if scale % 2 != 0 {
                        return Err(Error::Config(format!(
                            "row {ri}: cannot upsample beyond the input resolution"
                        )));
                    }
                    let skip = spec.skip.ok_or_else(|| {
                        Error::Config(format!("row {ri}: upconcat needs a skip source"))
                    })?;
                    let (c_skip, skip_scale) = match skip {
                        SkipSource::Input => (self.in_channels, 1),
                        SkipSource::Row(j) if j < ri => (rows[j].c_out, rows[j].out_scale),
                        SkipSource::Row(j) => {
                            return Err(Error::Config(format!(
                                "row {ri}: skip source row {j} is not an earlier row"
                            )))
                        }
                    };
                    scale /= 2;
                    if skip_scale != scale {
                        return Err(Error::Config(format!(
                            "row {ri}: skip source is at 1/{skip_scale} resolution, upsampled map at 1/{scale}"
                        )));
                    }
                    if c + c_skip != spec.c {
                        return Err(Error::Config(format!(
                            "row {ri}: {c} upsampled + {c_skip} skip channels != {}",
                            spec.c
                        )));
                    }
                    blocks.push(BlockPlan::Upconcat {
                        skip,
                        c_up: c,
                        c_skip,
                    });
                    c = spec.c;
                }
                OperatorKind::Sigmoid => {
                    if spec.c != c {
                        return Err(Error::Config(format!(
                            "row {ri}: sigmoid keeps {c} channels, table says {}",
                            spec.c
                        )));
                    }
                    blocks.push(BlockPlan::Sigmoid);
                }
            }
            rows.push(RowPlan {
                spec: spec.clone(),
                c_in,
                c_out: c,
                in_scale,
                out_scale: scale,
                encoder,
                blocks,
            });
        }
        let required_multiple = rows.iter().map(|r| r.out_scale).max().unwrap_or(1);
        Ok(Plan {
            in_channels: self.in_channels,
            rows,
            required_multiple,
        })
    }
}

/// The M2U-Net layer table with a configurable decoder factor.
pub fn m2unet_spec(t_decoder: f64) -> GraphSpec {
    use SkipSource::{Input, Row};
    let rows = vec![
        LayerSpec::conv(32, 2),
        LayerSpec::dwisesep(16, 1),
        LayerSpec::bottleneck(6.0, 24, 1, 2),
        LayerSpec::resbottleneck(6.0, 24, 1),
        LayerSpec::bottleneck(6.0, 32, 1, 2),
        LayerSpec::resbottleneck(6.0, 32, 2),
        LayerSpec::bottleneck(6.0, 64, 1, 2),
        LayerSpec::resbottleneck(6.0, 64, 3),
        LayerSpec::bottleneck(6.0, 96, 1, 1),
        LayerSpec::resbottleneck(6.0, 96, 2),
        // Skip taps: last map at 1/8, 1/4 and 1/2 resolution, then the image.
        LayerSpec::upconcat(128, Row(5)),
        LayerSpec::bottleneck(t_decoder, 64, 1, 1),
        LayerSpec::upconcat(88, Row(3)),
        LayerSpec::bottleneck(t_decoder, 44, 1, 1),
        LayerSpec::upconcat(60, Row(1)),
        LayerSpec::bottleneck(t_decoder, 30, 1, 1),
        LayerSpec::upconcat(33, Input),
        LayerSpec::bottleneck(t_decoder, 1, 1, 1),
        LayerSpec::sigmoid(),
    ];
    GraphSpec {
        name: "m2unet".into(),
        in_channels: 3,
        rows,
    }
}

/// A two-resolution miniature with every block type of M2U-Net, used for
/// end-to-end gradient checks and golden fixtures.
pub fn mini_spec() -> GraphSpec {
    use SkipSource::{Input, Row};
    GraphSpec {
        name: "m2unet-mini".into(),
        in_channels: 3,
        rows: vec![
            LayerSpec::conv(8, 2),
            LayerSpec::dwisesep(8, 1),
            LayerSpec::bottleneck(6.0, 12, 1, 2),
            LayerSpec::resbottleneck(6.0, 12, 1),
            LayerSpec::upconcat(20, Row(1)),
            LayerSpec::bottleneck(0.15, 6, 1, 1),
            LayerSpec::upconcat(9, Input),
            LayerSpec::bottleneck(0.15, 1, 1, 1),
            LayerSpec::sigmoid(),
        ],
    }
}
