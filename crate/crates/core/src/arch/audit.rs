use std::fmt;

use serde::Serialize;

use crate::arch::graph::ModelGraph;
use crate::arch::spec::{GraphSpec, OperatorKind};
use crate::error::Result;
use crate::tensor::Scalar;

/// Published per-row parameter counts of the canonical network; `None` for
/// parameter-free rows.
pub const PUBLISHED_ROW_PARAMS: [Option<u64>; 19] = [
    Some(928),
    Some(896),
    Some(5_136),
    Some(8_832),
    Some(10_000),
    Some(29_696),
    Some(21_056),
    Some(162_816),
    Some(66_624),
    Some(236_544),
    None,
    Some(4_023),
    None,
    Some(1_973),
    None,
    Some(987),
    None,
    Some(237),
    None,
];

pub const CANONICAL_TOTAL_PARAMS: u64 = 549_748;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RowReport {
    pub index: usize,
    pub kind: OperatorKind,
    pub t: Option<f64>,
    pub c: usize,
    pub n: usize,
    /// `None` for rows without a stride (upconcat, sigmoid).
    pub s: Option<usize>,
    /// `[c, h, w]` entering the row.
    pub input: [usize; 3],
    pub output: [usize; 3],
    pub params: u64,
    pub madds: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub graph: String,
    pub input_hw: (usize, usize),
    pub rows: Vec<RowReport>,
    pub total_params: u64,
    pub total_madds: u64,
}

/// Static shape propagation and cost accounting for one `h × w` image.
pub fn audit(spec: &GraphSpec, h: usize, w: usize) -> Result<AuditReport> {
    let plan = spec.plan()?;
    plan.check_input(plan.in_channels, h, w)?;
    let mut rows = Vec::with_capacity(plan.rows.len());
    for (index, row) in plan.rows.iter().enumerate() {
        let (h_in, w_in) = (h / row.in_scale, w / row.in_scale);
        let (mut hh, mut ww) = (h_in, w_in);
        let (mut params, mut madds) = (0, 0);
        for b in &row.blocks {
            for u in b.units() {
                let c = u.cost(hh, ww);
                params += c.params;
                madds += c.madds;
                (hh, ww) = u.output_hw(hh, ww);
            }
        }
        let strided = !matches!(
            row.spec.kind,
            OperatorKind::Upconcat | OperatorKind::Sigmoid
        );
        rows.push(RowReport {
            index,
            kind: row.spec.kind,
            t: row.spec.t,
            c: row.spec.c,
            n: row.spec.n,
            s: strided.then_some(row.spec.s),
            input: [row.c_in, h_in, w_in],
            output: [row.c_out, h / row.out_scale, w / row.out_scale],
            params,
            madds,
        });
    }
    Ok(AuditReport {
        graph: spec.name.clone(),
        input_hw: (h, w),
        total_params: rows.iter().map(|r| r.params).sum(),
        total_madds: rows.iter().map(|r| r.madds).sum(),
        rows,
    })
}

/// Per-row and total trainable parameter counts of a built graph, read off
/// its actual tensors.
pub fn param_count<T: Scalar>(g: &ModelGraph<T>) -> (Vec<u64>, u64) {
    let per_row: Vec<u64> = g
        .rows()
        .iter()
        .map(|blocks| {
            blocks
                .iter()
                .flat_map(|b| b.units())
                .map(|u| u.param_count())
                .sum()
        })
        .collect();
    let total = per_row.iter().sum();
    (per_row, total)
}

/// Multiply-adds of one forward pass at `h × w`.
pub fn madds_count<T: Scalar>(g: &ModelGraph<T>, h: usize, w: usize) -> Result<u64> {
    Ok(audit(g.spec(), h, w)?.total_madds)
}

impl AuditReport {
    /// Rows whose count differs from the published table, plus the total.
    /// Only meaningful for the canonical spec.
    pub fn canonical_mismatches(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.rows.len() != PUBLISHED_ROW_PARAMS.len() {
            out.push(format!(
                "{} rows, expected {}",
                self.rows.len(),
                PUBLISHED_ROW_PARAMS.len()
            ));
            return out;
        }
        for (row, expected) in self.rows.iter().zip(PUBLISHED_ROW_PARAMS) {
            let expected = expected.unwrap_or(0);
            if row.params != expected {
                out.push(format!(
                    "row {} ({}): {} params, expected {expected}",
                    row.index,
                    row.kind.name(),
                    row.params
                ));
            }
        }
        if self.total_params != CANONICAL_TOTAL_PARAMS {
            out.push(format!(
                "total {} params, expected {CANONICAL_TOTAL_PARAMS}",
                self.total_params
            ));
        }
        out
    }
}

fn fmt_thousands(v: u64) -> String {
    let s = v.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} at {}x{}",
            self.graph, self.input_hw.0, self.input_hw.1
        )?;
        writeln!(
            f,
            "{:>3}  {:<18} {:<14} {:>5} {:>4} {:>2} {:>2} {:>10} {:>15}",
            "#", "input", "operator", "t", "c", "n", "s", "params", "madds"
        )?;
        for r in &self.rows {
            let input = format!("{} x {}x{}", r.input[0], r.input[1], r.input[2]);
            let t = r.t.map_or("-".to_string(), |t| format!("{t}"));
            let s = r.s.map_or("-".to_string(), |s| s.to_string());
            let params = if r.params == 0 {
                "-".to_string()
            } else {
                fmt_thousands(r.params)
            };
            writeln!(
                f,
                "{:>3}  {:<18} {:<14} {:>5} {:>4} {:>2} {:>2} {:>10} {:>15}",
                r.index,
                input,
                r.kind.name(),
                t,
                r.c,
                r.n,
                s,
                params,
                fmt_thousands(r.madds)
            )?;
        }
        writeln!(f, "total params: {}", fmt_thousands(self.total_params))?;
        write!(
            f,
            "total madds:  {} ({:.2}B)",
            fmt_thousands(self.total_madds),
            self.total_madds as f64 / 1e9
        )
    }
}
