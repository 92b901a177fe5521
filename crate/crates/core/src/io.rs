//! CSV output with full-precision reals.

use std::io::{self, Write};

use crate::atlas::AtlasSpec;
use crate::bounds::TailRow;
use crate::portfolio::MasterDecomposition;
use crate::sim::Trajectory;

/// Formats a real with 17 significant digits in scientific notation.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn join_reals(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(format_real).collect::<Vec<_>>().join(",")
}

/// Header `t,x_1..x_n,rank_1..rank_n,y_1..y_{n−1},mu_1..mu_n`.
pub fn trajectory_header(n: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|i| format!("x_{i}")));
    cols.extend((1..=n).map(|i| format!("rank_{i}")));
    cols.extend((1..n).map(|i| format!("y_{i}")));
    cols.extend((1..=n).map(|i| format!("mu_{i}")));
    cols.join(",")
}

pub fn write_trajectory<W: Write>(w: &mut W, traj: &Trajectory) -> io::Result<()> {
    writeln!(w, "{}", trajectory_header(traj.n))?;
    for (row, &t) in traj.times.iter().enumerate() {
        let ranks: Vec<String> = traj.ranks.row(row).iter().map(|r| r.to_string()).collect();
        writeln!(
            w,
            "{},{},{},{}{}{}",
            format_real(t),
            join_reals(traj.x.row(row).iter().copied()),
            ranks.join(","),
            join_reals(traj.y.row(row).iter().copied()),
            if traj.n > 1 { "," } else { "" },
            join_reals(traj.mu.row(row).iter().copied()),
        )?;
    }
    Ok(())
}

/// Two-column series such as `t,tv`.
pub fn write_series<W: Write>(w: &mut W, header: &str, x: &[f64], y: &[f64]) -> io::Result<()> {
    writeln!(w, "{header}")?;
    for (a, b) in x.iter().zip(y) {
        writeln!(w, "{},{}", format_real(*a), format_real(*b))?;
    }
    Ok(())
}

pub fn write_tail_rows<W: Write>(w: &mut W, rows: &[TailRow]) -> io::Result<()> {
    writeln!(w, "r,empirical,bound,violation")?;
    for row in rows {
        writeln!(
            w,
            "{},{},{},{}",
            format_real(row.r),
            format_real(row.empirical),
            format_real(row.bound),
            row.violation
        )?;
    }
    Ok(())
}

pub fn write_master_rows<W: Write>(w: &mut W, rows: &[MasterDecomposition]) -> io::Result<()> {
    writeln!(w, "seed,dt,lhs,g_term,drift_integral,residual")?;
    for d in rows {
        writeln!(
            w,
            "{},{},{}",
            d.seed,
            format_real(d.dt),
            join_reals([d.lhs, d.g_term, d.drift_integral, d.residual])
        )?;
    }
    Ok(())
}

/// One row of a moment table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentRow {
    pub spec: AtlasSpec,
    pub r: u32,
    pub quadrature: f64,
    pub mc: f64,
    pub mc_se: f64,
}

pub fn write_moment_rows<W: Write>(w: &mut W, rows: &[MomentRow]) -> io::Result<()> {
    writeln!(w, "n,k,delta,r,quadrature,mc,mc_se")?;
    for m in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            m.spec.n,
            m.spec.k,
            format_real(m.spec.delta),
            m.r,
            join_reals([m.quadrature, m.mc, m.mc_se])
        )?;
    }
    Ok(())
}
