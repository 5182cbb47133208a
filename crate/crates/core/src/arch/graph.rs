use crate::arch::spec::{
    m2unet_spec, BlockPlan, BottleneckSpec, GraphSpec, OperatorKind, Plan, SkipSource, UnitPlan,
};
use crate::autograd::{OpId, Saved, Tape, ValueId};
use crate::error::{Error, Result};
use crate::io::NamedTensor;
use crate::ops::{
    add_residual, batchnorm_infer, batchnorm_train, bilinear_upsample_x2, concat_channels, conv2d,
    sigmoid, Activation, BatchNormParams, BnMode, ConvWeights, CostTally,
};
use crate::tensor::{Scalar, Tensor};

/// Convolution followed by batch norm and an optional activation.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBn<T = f32> {
    pub name: String,
    pub conv: ConvWeights<T>,
    pub bn: BatchNormParams<T>,
    pub act: Option<Activation>,
}

impl<T: Scalar> ConvBn<T> {
    fn from_plan(u: &UnitPlan) -> Result<Self> {
        Ok(Self {
            name: u.name.clone(),
            conv: u.zero_weights()?,
            bn: BatchNormParams::new(u.c_out),
            act: u.act,
        })
    }

    pub fn param_count(&self) -> u64 {
        self.conv.param_count() + self.bn.param_count()
    }

    fn cast<U: Scalar>(&self) -> ConvBn<U> {
        ConvBn {
            name: self.name.clone(),
            conv: ConvWeights {
                kernel: self.conv.kernel.cast(),
                groups: self.conv.groups,
                stride: self.conv.stride,
                padding: self.conv.padding,
            },
            bn: self.bn.cast(),
            act: self.act,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Block<T = f32> {
    Conv(ConvBn<T>),
    DwiseSep {
        dw: ConvBn<T>,
        pw: ConvBn<T>,
    },
    Bottleneck {
        spec: BottleneckSpec,
        expand: ConvBn<T>,
        dw: ConvBn<T>,
        project: ConvBn<T>,
    },
    Upconcat {
        skip: SkipSource,
    },
    Sigmoid,
}

impl<T: Scalar> Block<T> {
    fn from_plan(b: &BlockPlan) -> Result<Self> {
        Ok(match b {
            BlockPlan::Conv(u) => Block::Conv(ConvBn::from_plan(u)?),
            BlockPlan::DwiseSep { dw, pw } => Block::DwiseSep {
                dw: ConvBn::from_plan(dw)?,
                pw: ConvBn::from_plan(pw)?,
            },
            BlockPlan::Bottleneck {
                spec,
                expand,
                dw,
                project,
            } => Block::Bottleneck {
                spec: *spec,
                expand: ConvBn::from_plan(expand)?,
                dw: ConvBn::from_plan(dw)?,
                project: ConvBn::from_plan(project)?,
            },
            BlockPlan::Upconcat { skip, .. } => Block::Upconcat { skip: *skip },
            BlockPlan::Sigmoid => Block::Sigmoid,
        })
    }

    pub fn units(&self) -> Vec<&ConvBn<T>> {
        match self {
            Block::Conv(u) => vec![u],
            Block::DwiseSep { dw, pw } => vec![dw, pw],
            Block::Bottleneck {
                expand,
                dw,
                project,
                ..
            } => vec![expand, dw, project],
            Block::Upconcat { .. } | Block::Sigmoid => vec![],
        }
    }

    pub fn units_mut(&mut self) -> Vec<&mut ConvBn<T>> {
        match self {
            Block::Conv(u) => vec![u],
            Block::DwiseSep { dw, pw } => vec![dw, pw],
            Block::Bottleneck {
                expand,
                dw,
                project,
                ..
            } => vec![expand, dw, project],
            Block::Upconcat { .. } | Block::Sigmoid => vec![],
        }
    }

    fn cast<U: Scalar>(&self) -> Block<U> {
        match self {
            Block::Conv(u) => Block::Conv(u.cast()),
            Block::DwiseSep { dw, pw } => Block::DwiseSep {
                dw: dw.cast(),
                pw: pw.cast(),
            },
            Block::Bottleneck {
                spec,
                expand,
                dw,
                project,
            } => Block::Bottleneck {
                spec: *spec,
                expand: expand.cast(),
                dw: dw.cast(),
                project: project.cast(),
            },
            Block::Upconcat { skip } => Block::Upconcat { skip: *skip },
            Block::Sigmoid => Block::Sigmoid,
        }
    }
}

/// Gradients of one [`ConvBn`] unit.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitGrads<T> {
    pub kernel: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Gradients of every trainable tensor, in [`ModelGraph::trainable_mut`]
/// order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads<T> {
    pub units: Vec<UnitGrads<T>>,
    pub input: Option<Tensor<T>>,
}

impl<T: Scalar> ModelGrads<T> {
    pub fn tensors(&self) -> Vec<&[T]> {
        self.units
            .iter()
            .flat_map(|u| [u.kernel.as_slice(), u.gamma.as_slice(), u.beta.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.units
            .iter_mut()
            .flat_map(|u| [&mut u.kernel, &mut u.gamma, &mut u.beta])
            .collect()
    }

    pub fn add_assign(&mut self, other: &ModelGrads<T>) -> Result<()> {
        if self.units.len() != other.units.len() {
            return Err(Error::invalid("gradient sets belong to different graphs"));
        }
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= s;
            }
        }
    }
}

/// A recorded forward pass ready for [`ModelGraph::backward`].
pub struct TrainPass<T> {
    pub prob: Tensor<T>,
    tape: Tape<T>,
    input: ValueId,
    output: ValueId,
}

const NO_ID: ValueId = usize::MAX;

#[derive(Clone)]
struct Val<T> {
    t: Tensor<T>,
    id: ValueId,
}

struct Exec<T> {
    tape: Option<Tape<T>>,
    bn_mode: BnMode,
    tally: CostTally,
    bn_updates: Vec<(usize, BatchNormParams<T>)>,
    unit: usize,
}

impl<T: Scalar> Exec<T> {
    fn taping(&self) -> bool {
        self.tape.is_some()
    }

    fn record(
        &mut self,
        op: OpId,
        saved: Saved<T>,
        inputs: &[ValueId],
        slot: Option<usize>,
    ) -> ValueId {
        match &mut self.tape {
            Some(tape) => tape.record(op, saved, inputs, slot),
            None => NO_ID,
        }
    }

    fn conv_bn(&mut self, u: &ConvBn<T>, x: Val<T>) -> Result<Val<T>> {
        let idx = self.unit;
        self.unit += 1;
        let y = conv2d(&x.t, &u.conv)?;
        let mut cost = u.conv.cost(x.t.height(), x.t.width())?;
        cost.madds *= x.t.n() as u64;
        cost.params += u.bn.param_count();
        self.tally += cost;
        let saved = if self.taping() {
            Saved::Conv2d {
                input: x.t,
                weights: u.conv.clone(),
            }
        } else {
            Saved::None
        };
        let yid = self.record(OpId::Conv2d, saved, &[x.id], Some(2 * idx));

        let (z, saved) = match self.bn_mode {
            BnMode::Infer => {
                let z = batchnorm_infer(&y, &u.bn)?;
                let saved = if self.taping() {
                    Saved::BatchNormInfer {
                        input: y,
                        params: u.bn.clone(),
                    }
                } else {
                    Saved::None
                };
                (z, saved)
            }
            BnMode::Train => {
                let mut p = u.bn.clone();
                let (z, s) = batchnorm_train(&y, &mut p)?;
                self.bn_updates.push((idx, p));
                let saved = Saved::BatchNormTrain {
                    saved: s,
                    gamma: u.bn.gamma.clone(),
                };
                (z, saved)
            }
        };
        let zid = self.record(OpId::BatchNorm, saved, &[yid], Some(2 * idx + 1));

        match u.act {
            None => Ok(Val { t: z, id: zid }),
            Some(act) => {
                let a = act.apply(&z);
                let saved = if self.taping() {
                    Saved::Activation {
                        kind: act,
                        input: z,
                    }
                } else {
                    Saved::None
                };
                let aid = self.record(OpId::Activation, saved, &[zid], None);
                Ok(Val { t: a, id: aid })
            }
        }
    }
}

/// The layer graph with its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph<T = f32> {
    spec: GraphSpec,
    plan: Plan,
    rows: Vec<Vec<Block<T>>>,
    input_hw: (usize, usize),
}

/// Builds the M2U-Net graph for a `[channels, height, width]` input, with
/// zero convolution kernels and identity batch norms.
pub fn build_m2unet(input_shape: [usize; 3], t_decoder: f64) -> Result<ModelGraph<f32>> {
    ModelGraph::from_spec(m2unet_spec(t_decoder), input_shape)
}

impl<T: Scalar> ModelGraph<T> {
    pub fn from_spec(spec: GraphSpec, input_shape: [usize; 3]) -> Result<Self> {
        let plan = spec.plan()?;
        let [c, h, w] = input_shape;
        plan.check_input(c, h, w)?;
        let rows = plan
            .rows
            .iter()
            .map(|r| {
                r.blocks
                    .iter()
                    .map(Block::from_plan)
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec,
            plan,
            rows,
            input_hw: (h, w),
        })
    }

    pub fn spec(&self) -> &GraphSpec {
        &self.spec
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn rows(&self) -> &[Vec<Block<T>>] {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut [Vec<Block<T>>] {
        &mut self.rows
    }

    /// Nominal input resolution the graph was built for.
    pub fn input_hw(&self) -> (usize, usize) {
        self.input_hw
    }

    pub fn architecture_hash(&self) -> String {
        self.spec.architecture_hash()
    }

    /// Expansion factor of the decoder bottlenecks, if the graph has any.
    pub fn t_decoder(&self) -> Option<f64> {
        self.plan
            .rows
            .iter()
            .find(|r| !r.encoder && matches!(r.spec.kind, OperatorKind::Bottleneck))
            .and_then(|r| r.spec.t)
    }

    /// Whether the unit belongs to the encoder (rows before the first
    /// upconcat).
    pub fn is_encoder_unit(name: &str) -> bool {
        name.starts_with("encoder.")
    }

    pub fn units(&self) -> Vec<&ConvBn<T>> {
        self.rows.iter().flatten().flat_map(|b| b.units()).collect()
    }

    pub fn units_mut(&mut self) -> Vec<&mut ConvBn<T>> {
        self.rows
            .iter_mut()
            .flatten()
            .flat_map(|b| b.units_mut())
            .collect()
    }

    pub fn param_count(&self) -> u64 {
        self.units().iter().map(|u| u.param_count()).sum()
    }

    /// Trainable tensors: for each unit, its kernel, gamma and beta.
    pub fn trainable_mut(&mut self) -> Vec<&mut [T]> {
        self.units_mut()
            .into_iter()
            .flat_map(|u| {
                [
                    u.conv.kernel.data_mut(),
                    u.bn.gamma.as_mut_slice(),
                    u.bn.beta.as_mut_slice(),
                ]
            })
            .collect()
    }

    pub fn trainable(&self) -> Vec<&[T]> {
        self.units()
            .into_iter()
            .flat_map(|u| {
                [
                    u.conv.kernel.data(),
                    u.bn.gamma.as_slice(),
                    u.bn.beta.as_slice(),
                ]
            })
            .collect()
    }

    pub fn zero_grads(&self) -> ModelGrads<T> {
        ModelGrads {
            units: self
                .units()
                .iter()
                .map(|u| UnitGrads {
                    kernel: vec![T::zero(); u.conv.kernel.len()],
                    gamma: vec![T::zero(); u.bn.channels()],
                    beta: vec![T::zero(); u.bn.channels()],
                })
                .collect(),
            input: None,
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelGraph<U> {
        ModelGraph {
            spec: self.spec.clone(),
            plan: self.plan.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().map(Block::cast).collect())
                .collect(),
            input_hw: self.input_hw,
        }
    }

    fn check_image(&self, image: &Tensor<T>) -> Result<()> {
        if image.n() == 0 {
            return Err(Error::invalid("empty batch"));
        }
        self.plan
            .check_input(image.channels(), image.height(), image.width())
            .map_err(|e| Error::invalid(e.to_string()))
    }

    fn execute(&self, image: &Tensor<T>, exec: &mut Exec<T>) -> Result<Val<T>> {
        self.check_image(image)?;
        let input_id = match &mut exec.tape {
            Some(t) => t.leaf(),
            None => NO_ID,
        };
        let input = Val {
            t: image.clone(),
            id: input_id,
        };
        let mut keep = vec![false; self.rows.len()];
        for b in self.rows.iter().flatten() {
            if let Block::Upconcat {
                skip: SkipSource::Row(j),
            } = b
            {
                keep[*j] = true;
            }
        }
        let mut kept: Vec<Option<Val<T>>> = vec![None; self.rows.len()];
        let mut cur = input.clone();
        for (ri, row) in self.rows.iter().enumerate() {
            for block in row {
                cur = match block {
                    Block::Conv(u) => exec.conv_bn(u, cur)?,
                    Block::DwiseSep { dw, pw } => {
                        let h = exec.conv_bn(dw, cur)?;
                        exec.conv_bn(pw, h)?
                    }
                    Block::Bottleneck {
                        spec,
                        expand,
                        dw,
                        project,
                    } => {
                        let shortcut = spec.residual.then(|| cur.clone());
                        let h = exec.conv_bn(expand, cur)?;
                        let h = exec.conv_bn(dw, h)?;
                        let h = exec.conv_bn(project, h)?;
                        match shortcut {
                            None => h,
                            Some(sc) => {
                                let t = add_residual(&h.t, &sc.t)?;
                                let id = exec.record(
                                    OpId::AddResidual,
                                    Saved::AddResidual,
                                    &[h.id, sc.id],
                                    None,
                                );
                                Val { t, id }
                            }
                        }
                    }
                    Block::Upconcat { skip } => {
                        let up = bilinear_upsample_x2(&cur.t)?;
                        let uid = exec.record(
                            OpId::Upsample,
                            Saved::Upsample {
                                in_shape: cur.t.shape(),
                            },
                            &[cur.id],
                            None,
                        );
                        let skip_val = match skip {
                            SkipSource::Input => &input,
                            SkipSource::Row(j) => kept[*j].as_ref().ok_or_else(|| {
                                Error::usage(format!("skip row {j} was not kept"))
                            })?,
                        };
                        let t = concat_channels(&up, &skip_val.t)?;
                        let id = exec.record(
                            OpId::Concat,
                            Saved::Concat {
                                a_channels: up.channels(),
                            },
                            &[uid, skip_val.id],
                            None,
                        );
                        Val { t, id }
                    }
                    Block::Sigmoid => {
                        let t = sigmoid(&cur.t);
                        let saved = if exec.taping() {
                            Saved::Sigmoid { output: t.clone() }
                        } else {
                            Saved::None
                        };
                        let id = exec.record(OpId::Sigmoid, saved, &[cur.id], None);
                        Val { t, id }
                    }
                };
            }
            if keep[ri] {
                kept[ri] = Some(cur.clone());
            }
        }
        cur.t.ensure_finite("forward")?;
        Ok(cur)
    }

    /// Inference forward pass (batch norm with running statistics).
    /// Returns the `(n, 1, h, w)` probability map.
    pub fn forward(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_with_tally(image).map(|(p, _)| p)
    }

    /// Inference forward pass that also tallies the cost of every operator
    /// it runs.
    pub fn forward_with_tally(&self, image: &Tensor<T>) -> Result<(Tensor<T>, CostTally)> {
        let mut exec = Exec {
            tape: None,
            bn_mode: BnMode::Infer,
            tally: CostTally::ZERO,
            bn_updates: Vec::new(),
            unit: 0,
        };
        let out = self.execute(image, &mut exec)?;
        Ok((out.t, exec.tally))
    }

    /// Forward pass that records a tape, without touching the running
    /// statistics.
    pub fn forward_recorded(&self, image: &Tensor<T>, bn_mode: BnMode) -> Result<TrainPass<T>> {
        self.record_pass(image, bn_mode).map(|(pass, _)| pass)
    }

    /// Training forward pass: batch statistics, running statistics updated.
    pub fn forward_train(&mut self, image: &Tensor<T>) -> Result<TrainPass<T>> {
        let (pass, updates) = self.record_pass(image, BnMode::Train)?;
        let mut units = self.units_mut();
        for (idx, p) in updates {
            units[idx].bn = p;
        }
        Ok(pass)
    }

    fn record_pass(
        &self,
        image: &Tensor<T>,
        bn_mode: BnMode,
    ) -> Result<(TrainPass<T>, Vec<(usize, BatchNormParams<T>)>)> {
        let mut exec = Exec {
            tape: Some(Tape::new()),
            bn_mode,
            tally: CostTally::ZERO,
            bn_updates: Vec::new(),
            unit: 0,
        };
        let out = self.execute(image, &mut exec)?;
        let tape = exec.tape.take().expect("tape was enabled");
        Ok((
            TrainPass {
                prob: out.t,
                tape,
                input: 0,
                output: out.id,
            },
            exec.bn_updates,
        ))
    }

    /// Backpropagates `grad_prob` (d loss / d probability map) through a
    /// recorded pass.
    pub fn backward(&self, pass: &TrainPass<T>, grad_prob: Tensor<T>) -> Result<ModelGrads<T>> {
        if grad_prob.shape() != pass.prob.shape() {
            return Err(Error::invalid(format!(
                "gradient shape {:?} does not match output {:?}",
                grad_prob.shape(),
                pass.prob.shape()
            )));
        }
        let n_units = self.units().len();
        let mut grads = pass.tape.backward(pass.output, grad_prob, 2 * n_units)?;
        let mut out = self.zero_grads();
        for (i, ug) in out.units.iter_mut().enumerate() {
            if let Some(mut p) = grads.params[2 * i].take() {
                ug.kernel = p.swap_remove(0);
            }
            if let Some(mut p) = grads.params[2 * i + 1].take() {
                ug.beta = p.pop().unwrap_or_default();
                ug.gamma = p.pop().unwrap_or_default();
            }
        }
        out.input = grads.values[pass.input].take();
        Ok(out)
    }

    /// All weights and buffers under hierarchical names.
    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        let to32 = |v: &[T]| v.iter().map(|x| x.as_f64() as f32).collect::<Vec<f32>>();
        let mut out = Vec::new();
        for u in self.units() {
            let c = u.bn.channels();
            out.push(NamedTensor::new(
                format!("{}.weight", u.name),
                u.conv.kernel.shape().to_vec(),
                to32(u.conv.kernel.data()),
            ));
            for (part, v) in [
                ("gamma", &u.bn.gamma),
                ("beta", &u.bn.beta),
                ("running_mean", &u.bn.running_mean),
                ("running_var", &u.bn.running_var),
            ] {
                out.push(NamedTensor::new(
                    format!("{}.bn.{part}", u.name),
                    vec![c],
                    to32(v),
                ));
            }
        }
        out
    }

    /// Installs every tensor in `tensors` whose name passes `filter`.
    ///
    /// All names and shapes are validated first; on any mismatch nothing is
    /// installed and the error lists every offending tensor. Every expected
    /// tensor that passes `filter` must be present.
    pub fn install(
        &mut self,
        tensors: &[NamedTensor],
        filter: impl Fn(&str) -> bool,
    ) -> Result<usize> {
        let expected = self.named_tensors();
        let by_name: std::collections::HashMap<&str, &NamedTensor> =
            tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let mut problems = Vec::new();
        for e in expected.iter().filter(|e| filter(&e.name)) {
            match by_name.get(e.name.as_str()) {
                None => problems.push(format!("{}: missing", e.name)),
                Some(t) if t.dims != e.dims => problems.push(format!(
                    "{}: shape {:?}, expected {:?}",
                    e.name, t.dims, e.dims
                )),
                Some(t) if t.data.len() != e.data.len() => problems.push(format!(
                    "{}: {} values, expected {}",
                    e.name,
                    t.data.len(),
                    e.data.len()
                )),
                Some(_) => {}
            }
        }
        let known: std::collections::HashSet<&str> =
            expected.iter().map(|e| e.name.as_str()).collect();
        for t in tensors.iter().filter(|t| filter(&t.name)) {
            if !known.contains(t.name.as_str()) {
                problems.push(format!("{}: not part of this architecture", t.name));
            }
        }
        if !problems.is_empty() {
            return Err(Error::invalid(format!(
                "tensor mismatch: {}",
                problems.join("; ")
            )));
        }
        let conv = |v: &[f32]| v.iter().map(|x| T::of(*x as f64)).collect::<Vec<T>>();
        let mut installed = 0;
        for u in self.units_mut() {
            let get = |suffix: &str| {
                let name = format!("{}{suffix}", u.name);
                if filter(&name) {
                    by_name.get(name.as_str()).copied()
                } else {
                    None
                }
            };
            if let Some(t) = get(".weight") {
                u.conv.kernel.data_mut().copy_from_slice(&conv(&t.data));
                installed += 1;
            }
            for (suffix, dst) in [
                (".bn.gamma", &mut u.bn.gamma),
                (".bn.beta", &mut u.bn.beta),
                (".bn.running_mean", &mut u.bn.running_mean),
                (".bn.running_var", &mut u.bn.running_var),
            ] {
                let name = format!("{}{suffix}", u.name);
                if !filter(&name) {
                    continue;
                }
                if let Some(t) = by_name.get(name.as_str()) {
                    *dst = conv(&t.data);
                    installed += 1;
                }
            }
        }
        Ok(installed)
    }
}
