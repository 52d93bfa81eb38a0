//! Grid specs and fixed-precision number output.

use anyhow::{bail, Context, Result};
use flowshape::theory::{lin_grid, log_grid};

/// Significant digits for every number the CLI prints.
pub const SIG_DIGITS: usize = 12;

/// Parses `a,b,c`, `log:lo:hi:n` or `lin:lo:hi:n`.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let spec = spec.trim();
    let grid = if let Some(rest) = spec.strip_prefix("log:").or_else(|| spec.strip_prefix("lin:")) {
        let parts: Vec<&str> = rest.split(':').collect();
        let [lo, hi, n] = parts[..] else {
            bail!("grid {spec:?}: expected kind:lo:hi:n");
        };
        let lo: f64 = lo.trim().parse().with_context(|| format!("grid {spec:?}: bad lower end"))?;
        let hi: f64 = hi.trim().parse().with_context(|| format!("grid {spec:?}: bad upper end"))?;
        let n: usize = n.trim().parse().with_context(|| format!("grid {spec:?}: bad point count"))?;
        if n == 0 {
            bail!("grid {spec:?}: needs at least one point");
        }
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            bail!("grid {spec:?}: need finite lo <= hi");
        }
        if spec.starts_with("log:") {
            if lo <= 0.0 {
                bail!("grid {spec:?}: log grids need lo > 0");
            }
            log_grid(lo, hi, n)
        } else {
            lin_grid(lo, hi, n)
        }
    } else {
        spec.split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .with_context(|| format!("grid {spec:?}: {s:?} is not a number"))
            })
            .collect::<Result<Vec<_>>>()?
    };
    if let Some(bad) = grid.iter().find(|x| !x.is_finite()) {
        bail!("grid {spec:?}: non-finite value {bad}");
    }
    Ok(grid)
}

/// `x` rounded to [`SIG_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIG_DIGITS - 1, x).parse().unwrap_or(x)
}

/// `printf("%.12g")`: fixed notation for exponents in `-4..12`, scientific
/// otherwise, trailing zeros dropped.
pub fn fmt_sig(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", SIG_DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..SIG_DIGITS as i32).contains(&exp) {
        let decimals = (SIG_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa.to_string()), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// JSON number at the CLI precision; non-finite values become strings.
pub fn json_num(x: f64) -> serde_json::Value {
    serde_json::Number::from_f64(round_sig(x))
        .map(serde_json::Value::Number)
        .unwrap_or_else(|| serde_json::Value::String(fmt_sig(x)))
}
