//! Parsers for sweep grids and `{layer}` path templates.

use std::path::PathBuf;

#[derive(Debug, Clone, PartialEq)]
pub struct Alphas(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct Layers(pub Vec<u32>);

fn number(s: &str) -> Result<f64, String> {
    let x: f64 = s.trim().parse().map_err(|_| format!("not a number: {s:?}"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("not finite: {s:?}"))
    }
}

/// `start:stop:step` with both ends included, or `a,b,c`. Grid points are
/// `start + i * step`, so `0:3:0.5` gives exactly 0, 0.5, ..., 3.
pub fn parse_alphas(s: &str) -> Result<Alphas, String> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (number(start)?, number(stop)?, number(step)?);
            if step <= 0.0 || stop < start {
                return Err("range needs start <= stop and step > 0".into());
            }
            let n = ((stop - start) / step).round();
            if (start + n * step - stop).abs() > 1e-9 * (1.0 + stop.abs()) {
                return Err(format!("step {step} does not divide [{start}, {stop}]"));
            }
            Ok(Alphas((0..=n as usize).map(|i| start + i as f64 * step).collect()))
        }
        [_] => s.split(',').map(number).collect::<Result<_, _>>().map(Alphas),
        _ => Err("expected start:stop:step or a comma list".into()),
    }
}

pub fn parse_layers(s: &str) -> Result<Layers, String> {
    let layers: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("not a layer index: {p:?}")))
        .collect::<Result<_, _>>()?;
    let mut seen = layers.clone();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != layers.len() {
        return Err("layers must be distinct".into());
    }
    Ok(Layers(layers))
}

pub fn fill(template: &str, layer: u32) -> PathBuf {
    PathBuf::from(template.replace("{layer}", &layer.to_string()))
}
