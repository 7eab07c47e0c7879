use super::{Resolution, SeriesBatch};
use crate::error::{Error, Result};

fn ratio(coarse: Resolution, fine: Resolution) -> Result<usize> {
    match (coarse.minutes(), fine.minutes()) {
        (Some(c), Some(f)) if c > f && c % f == 0 => Ok((c / f) as usize),
        _ => Err(Error::invalid(format!("cannot convert {coarse} data to {fine}"))),
    }
}

/// Upsamples by linear interpolation between consecutive points. Each
/// input point `x[i]` lands on output position `i·ratio`; the points after
/// the last input hold its value, so the output has `ratio·T` points.
pub fn resample(x: &SeriesBatch, from: Resolution, to: Resolution) -> Result<SeriesBatch> {
    if x.resolution != from {
        return Err(Error::invalid(format!("batch is {} data, not {from}", x.resolution)));
    }
    let k = ratio(from, to)?;
    let t = x.len();
    let mut data = Vec::with_capacity(x.as_slice().len() * k);
    for channel in x.as_slice().chunks_exact(t) {
        for i in 0..t {
            let a = channel[i];
            let b = channel.get(i + 1).copied().unwrap_or(a);
            for j in 0..k {
                data.push(a + (b - a) * (j as f64 / k as f64));
            }
        }
    }
    let mut out = SeriesBatch::new(to, x.channels(), t * k, data)?;
    out.source = x.source.clone();
    out.normalization = x.normalization;
    out.night_window = x.night_window;
    Ok(out)
}

/// Downsamples by averaging consecutive blocks of `ratio` points.
pub fn aggregate(x: &SeriesBatch, to: Resolution) -> Result<SeriesBatch> {
    let k = ratio(to, x.resolution)?;
    let t = x.len();
    if t % k != 0 {
        return Err(Error::invalid(format!(
            "{t}-point {} windows do not split into {to} blocks of {k}",
            x.resolution
        )));
    }
    let data = x
        .as_slice()
        .chunks_exact(k)
        .map(|block| block.iter().sum::<f64>() / k as f64)
        .collect();
    let mut out = SeriesBatch::new(to, x.channels(), t / k, data)?;
    out.source = x.source.clone();
    out.normalization = x.normalization;
    out.night_window = x.night_window;
    Ok(out)
}
