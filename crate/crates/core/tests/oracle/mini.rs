//! The miniature network: strided conv, depthwise-separable block, a
//! strided and a residual inverted bottleneck, then two upsample+concat
//! steps each followed by a contracting bottleneck, and a sigmoid.

use super::*;

enum Row {
    Conv {
        c: usize,
        s: usize,
    },
    DwSep {
        c: usize,
    },
    Bottleneck {
        t: f64,
        c: usize,
        s: usize,
        residual: bool,
    },
    Up {
        skip: Option<usize>,
    },
    Sigmoid,
}

fn rows() -> Vec<Row> {
    vec![
        Row::Conv { c: 8, s: 2 },
        Row::DwSep { c: 8 },
        Row::Bottleneck {
            t: 6.0,
            c: 12,
            s: 2,
            residual: false,
        },
        Row::Bottleneck {
            t: 6.0,
            c: 12,
            s: 1,
            residual: true,
        },
        Row::Up { skip: Some(1) },
        Row::Bottleneck {
            t: 0.15,
            c: 6,
            s: 1,
            residual: false,
        },
        Row::Up { skip: None },
        Row::Bottleneck {
            t: 0.15,
            c: 1,
            s: 1,
            residual: false,
        },
        Row::Sigmoid,
    ]
}

/// A convolution + batch-norm unit with its parameters.
struct Unit {
    name: String,
    w: Arr,
    gamma: Vec<f64>,
    beta: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl Unit {
    fn new(r: &mut ChaCha8Rng, name: String, cout: usize, cin_per_group: usize, k: usize) -> Self {
        let fan_in = (cin_per_group * k * k) as f64;
        let a = (6.0 / fan_in).sqrt();
        let w = uniform(r, [cout, cin_per_group, k, k], -a, a);
        let v = |r: &mut ChaCha8Rng, lo, hi| uniform(r, [1, 1, 1, cout], lo, hi).data;
        Self {
            name,
            w,
            gamma: v(r, 0.8, 1.2),
            beta: v(r, -0.1, 0.1),
            mean: v(r, -0.1, 0.1),
            var: v(r, 0.5, 1.5),
        }
    }

    fn apply(&self, x: &Arr, stride: usize, groups: usize, act: bool) -> Arr {
        let k = self.w.dims[2];
        let y = conv(x, &self.w, stride, k / 2, groups);
        let y = bn_infer(&y, &self.gamma, &self.beta, &self.mean, &self.var, BN_EPS);
        if act {
            relu6(&y)
        } else {
            y
        }
    }

    fn entries(&self) -> Vec<Entry> {
        vec![
            Entry::arr(&format!("{}.weight", self.name), &self.w),
            Entry::vec(&format!("{}.bn.gamma", self.name), &self.gamma),
            Entry::vec(&format!("{}.bn.beta", self.name), &self.beta),
            Entry::vec(&format!("{}.bn.running_mean", self.name), &self.mean),
            Entry::vec(&format!("{}.bn.running_var", self.name), &self.var),
        ]
    }
}

fn hidden(t: f64, cin: usize) -> usize {
    ((t * cin as f64 + 0.5).floor() as usize).max(1)
}

pub const SIZE: usize = 64;

/// Builds seeded weights, runs the network on a seeded image in inference
/// mode, and packs input, weights (under the engine's unit names) and the
/// probability map.
pub fn fixture() -> Vec<u8> {
    let mut r = rng(107);
    let input = uniform(&mut r, [1, 3, SIZE, SIZE], 0.0, 1.0);
    let mut entries = vec![Entry::arr("input", &input)];
    let mut outputs: Vec<Arr> = Vec::new();
    let mut x = input.clone();
    let mut c = 3;
    let mut in_decoder = false;
    for (i, row) in rows().into_iter().enumerate() {
        let part = if in_decoder || matches!(row, Row::Up { .. }) {
            "decoder"
        } else {
            "encoder"
        };
        let name = |p: &str| format!("{part}.{i}.0.{p}");
        x = match row {
            Row::Conv { c: co, s } => {
                let u = Unit::new(&mut r, name("conv"), co, c, 3);
                entries.extend(u.entries());
                c = co;
                u.apply(&x, s, 1, true)
            }
            Row::DwSep { c: co } => {
                let dw = Unit::new(&mut r, name("dw"), c, 1, 3);
                let pw = Unit::new(&mut r, name("pw"), co, c, 1);
                entries.extend(dw.entries());
                entries.extend(pw.entries());
                let y = pw.apply(&dw.apply(&x, 1, c, true), 1, 1, false);
                c = co;
                y
            }
            Row::Bottleneck {
                t,
                c: co,
                s,
                residual,
            } => {
                let h = hidden(t, c);
                let e = Unit::new(&mut r, name("expand"), h, c, 1);
                let d = Unit::new(&mut r, name("dw"), h, 1, 3);
                let p = Unit::new(&mut r, name("project"), co, h, 1);
                for u in [&e, &d, &p] {
                    entries.extend(u.entries());
                }
                let y = p.apply(&d.apply(&e.apply(&x, 1, 1, true), s, h, true), 1, 1, false);
                c = co;
                if residual {
                    add(&y, &x)
                } else {
                    y
                }
            }
            Row::Up { skip } => {
                in_decoder = true;
                let s = match skip {
                    Some(j) => outputs[j].clone(),
                    None => input.clone(),
                };
                c += s.dims[1];
                concat(&upsample2(&x), &s)
            }
            Row::Sigmoid => sigmoid(&x),
        };
        outputs.push(x.clone());
    }
    entries.push(Entry::arr("prob", &x));
    encode_m2uf(&entries)
}
