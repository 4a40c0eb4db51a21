//! Value parsers for compound flags.

use maxsim_core::synth::LengthDist;
use maxsim_core::{ElemType, TileConfig};

/// `BQ,BD` or `BQ,BD,QCHUNK`.
pub fn parse_tile(s: &str) -> Result<TileConfig, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let t = match parts[..] {
        [bq, bd] => TileConfig::tiles(bq, bd),
        [bq, bd, qchunk] => TileConfig::new(bq, bd, qchunk),
        _ => return Err("expected BQ,BD or BQ,BD,QCHUNK".into()),
    };
    t.map_err(|e| e.to_string())
}

/// `fixed:L`, `uniform:MIN:MAX`, `wide`, `hotpot` or `ragged`.
pub fn parse_lengths(s: &str) -> Result<LengthDist, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |p: &str| p.parse::<usize>().map_err(|e| format!("{p:?}: {e}"));
    match parts[..] {
        ["fixed", l] => Ok(LengthDist::Fixed { len: num(l)? }),
        ["uniform", lo, hi] => {
            let (min, max) = (num(lo)?, num(hi)?);
            if min == 0 || min > max {
                return Err(format!("bad range {min}..={max}"));
            }
            Ok(LengthDist::Uniform { min, max })
        }
        ["wide"] => Ok(LengthDist::WIDE_UNIFORM),
        ["hotpot"] => Ok(LengthDist::HotpotLike),
        ["ragged"] => Ok(LengthDist::Ragged),
        _ => Err("expected fixed:L, uniform:MIN:MAX, wide, hotpot or ragged".into()),
    }
}

pub fn parse_elem(s: &str) -> Result<ElemType, String> {
    match s {
        "f32" => Ok(ElemType::F32),
        "f16" => Ok(ElemType::F16),
        _ => Err("expected f32 or f16".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiles() {
        assert_eq!(parse_tile("8,16").unwrap(), TileConfig::tiles(8, 16).unwrap());
        assert_eq!(parse_tile("8,16,32").unwrap(), TileConfig::new(8, 16, 32).unwrap());
        assert!(parse_tile("8,16,12").is_err());
        assert!(parse_tile("0,4").is_err());
        assert!(parse_tile("8").is_err());
    }

    #[test]
    fn lengths() {
        assert_eq!(parse_lengths("fixed:12").unwrap(), LengthDist::Fixed { len: 12 });
        assert_eq!(parse_lengths("uniform:4:9").unwrap(), LengthDist::Uniform { min: 4, max: 9 });
        assert!(parse_lengths("uniform:9:4").is_err());
        assert!(parse_lengths("gamma").is_err());
    }
}
