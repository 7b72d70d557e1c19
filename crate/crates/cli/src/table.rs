use std::fmt::Write;

use serde::Serialize;

/// One sweep point of a results table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub m_u: usize,
    pub m_p: usize,
    pub s: f64,
    pub n: u32,
    pub mode: String,
    pub eps: f64,
    pub cond_g: f64,
    pub cond_gp: f64,
    pub rank: usize,
    pub err_u: Option<f64>,
    pub err_p: Option<f64>,
    pub err: Option<f64>,
    pub drag_lift: Option<[f64; 2]>,
    pub tol_background: f64,
    pub tol_riesz: f64,
}

/// Optional column groups.
#[derive(Debug, Clone, Copy, Default)]
pub struct Columns {
    pub drag_lift: bool,
    pub tolerances: bool,
}

/// `x` with six significant digits, in the style of C's `%g`.
pub fn sig6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn header(cols: Columns) -> String {
    let mut h = String::from("m_u,m_p,s,n,mode,eps,cond_G,cond_GP,rank,err_u,err_p,err");
    if cols.drag_lift {
        h.push_str(",c_D,c_L");
    }
    if cols.tolerances {
        h.push_str(",tol_background,tol_riesz");
    }
    h
}

/// CSV text for `rows` in the given order. Missing errors print as empty fields.
pub fn emit_table(rows: &[Row], cols: Columns) -> String {
    let mut out = header(cols);
    out.push('\n');
    let opt = |v: Option<f64>| v.map(sig6).unwrap_or_default();
    for r in rows {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.m_u,
            r.m_p,
            sig6(r.s),
            r.n,
            r.mode,
            sig6(r.eps),
            sig6(r.cond_g),
            sig6(r.cond_gp),
            r.rank,
            opt(r.err_u),
            opt(r.err_p),
            opt(r.err)
        );
        if cols.drag_lift {
            let [d, l] = r.drag_lift.map(|v| v.map(Some)).unwrap_or([None, None]);
            let _ = write!(out, ",{},{}", opt(d), opt(l));
        }
        if cols.tolerances {
            let _ = write!(out, ",{},{}", sig6(r.tol_background), sig6(r.tol_riesz));
        }
        out.push('\n');
    }
    out
}
