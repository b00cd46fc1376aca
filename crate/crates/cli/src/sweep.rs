use std::fmt;
use std::str::FromStr;

use mode2::ScenarioConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Nu,
    BandwidthB,
    Lambda,
    PlrTarget,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Nu => "nu",
            SweepParam::BandwidthB => "bandwidth_b",
            SweepParam::Lambda => "lambda",
            SweepParam::PlrTarget => "plr_target",
        }
    }

    pub fn is_integer(self) -> bool {
        matches!(self, SweepParam::Nu | SweepParam::BandwidthB)
    }

    pub fn apply(self, cfg: &mut ScenarioConfig, value: f64) {
        match self {
            SweepParam::Nu => cfg.repetitions_nu = value as u32,
            SweepParam::BandwidthB => cfg.num_subchannels_b = value as u32,
            SweepParam::Lambda => cfg.lambda_rate = value,
            SweepParam::PlrTarget => cfg.plr_target = value,
        }
    }
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "nu" => Ok(SweepParam::Nu),
            "bandwidth_b" | "b" => Ok(SweepParam::BandwidthB),
            "lambda" => Ok(SweepParam::Lambda),
            "plr_target" => Ok(SweepParam::PlrTarget),
            _ => Err(format!(
                "unknown sweep parameter {s:?} (expected nu, bandwidth_b, lambda or plr_target)"
            )),
        }
    }
}

/// One swept parameter with its values, parsed from
/// `NAME=START..STOP[:STEP]`, `NAME=START..STOP:xFACTOR` or `NAME=V1,V2,...`.
/// Ranges include `STOP`; the default step is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

fn number(s: &str) -> Result<f64, String> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| format!("not a number: {s:?}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("not a finite number: {s:?}"))
    }
}

fn range(start: f64, stop: f64, step: &str) -> Result<Vec<f64>, String> {
    // relative slack so 0.1..0.3:0.1 keeps its end point
    let slack = 1e-9 * start.abs().max(stop.abs()).max(1.0);
    let mut out = Vec::new();
    if let Some(factor) = step.strip_prefix('x') {
        let factor = number(factor)?;
        if !(factor > 1.0) || !(start > 0.0) {
            return Err("geometric ranges need START > 0 and a factor > 1".into());
        }
        let mut v = start;
        while v <= stop * (1.0 + 1e-9) {
            out.push(v);
            v *= factor;
        }
    } else {
        let step = number(step)?;
        if !(step > 0.0) {
            return Err(format!("step must be > 0, got {step}"));
        }
        let n = ((stop - start + slack) / step).floor();
        if n >= 0.0 {
            if n > 1e6 {
                return Err("range has more than a million points".into());
            }
            out.extend((0..=n as usize).map(|i| start + i as f64 * step));
        }
    }
    Ok(out)
}

impl FromStr for SweepSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (name, rest) = s
            .split_once('=')
            .ok_or_else(|| format!("expected NAME=VALUES, got {s:?}"))?;
        let param: SweepParam = name.trim().parse()?;
        let values = if let Some((start, tail)) = rest.split_once("..") {
            let (stop, step) = tail.split_once(':').unwrap_or((tail, "1"));
            range(number(start)?, number(stop)?, step.trim())?
        } else {
            rest.split(',').map(number).collect::<Result<_, _>>()?
        };
        if values.is_empty() {
            return Err(format!("{}: empty range", param.name()));
        }
        if param.is_integer() {
            if let Some(v) = values.iter().find(|v| v.fract() != 0.0 || **v < 0.0) {
                return Err(format!(
                    "{}: {v} is not a non-negative integer",
                    param.name()
                ));
            }
        }
        Ok(SweepSpec { param, values })
    }
}

impl fmt::Display for SweepSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}=", self.param.name())?;
        for (i, v) in self.values.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Cartesian product of the specs, the last spec varying fastest.
pub fn grid(specs: &[SweepSpec]) -> Vec<Vec<f64>> {
    specs.iter().fold(vec![Vec::new()], |acc, spec| {
        acc.iter()
            .flat_map(|prefix| {
                spec.values.iter().map(move |&v| {
                    let mut point = prefix.clone();
                    point.push(v);
                    point
                })
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_ranges_and_lists() {
        let s: SweepSpec = "nu=0..8".parse().unwrap();
        assert_eq!(s.values, (0..=8).map(f64::from).collect::<Vec<_>>());
        let s: SweepSpec = "bandwidth_b=4..12:2".parse().unwrap();
        assert_eq!(s.values, vec![4.0, 6.0, 8.0, 10.0, 12.0]);
        let s: SweepSpec = "lambda=0.1..0.3:0.1".parse().unwrap();
        assert_eq!(s.values.len(), 3);
        let s: SweepSpec = "plr_target=1e-5..1e-2:x10".parse().unwrap();
        assert_eq!(s.values.len(), 4);
        let s: SweepSpec = "plr_target=1e-2,1e-5".parse().unwrap();
        assert_eq!(s.values, vec![1e-2, 1e-5]);
        let s: SweepSpec = "nu=3".parse().unwrap();
        assert_eq!(s.values, vec![3.0]);
    }

    #[test]
    fn rejects_bad_specs() {
        for bad in [
            "nu",
            "mu=1..2",
            "nu=5..2",
            "nu=0.5",
            "nu=-1",
            "lambda=1..2:0",
            "lambda=a..b",
            "plr_target=0..1:x2",
        ] {
            assert!(bad.parse::<SweepSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn grid_order() {
        let specs: Vec<SweepSpec> = ["nu=0,1", "bandwidth_b=5,6,7"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect();
        let g = grid(&specs);
        assert_eq!(g.len(), 6);
        assert_eq!(g[0], vec![0.0, 5.0]);
        assert_eq!(g[1], vec![0.0, 6.0]);
        assert_eq!(g[5], vec![1.0, 7.0]);
        assert_eq!(grid(&[]), vec![Vec::<f64>::new()]);
    }
}
