//! CSV schemas for populations and drawn samples.
//!
//! All files are UTF-8 with a header row and '.' decimal separator. Lines
//! starting with '#' are comments; sample files carry their design metadata
//! (design kind, N, per-stratum sizes) in such a line so that a
//! generate -> draw -> estimate round trip is exact. Floats are written with
//! the shortest representation that parses back to the same value.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};

use crate::design::{DesignKind, DrawnSample, SampleStratum, SampleUnit};
use crate::error::{Error, Result};
use crate::population::{FinitePopulation, Stratum};

pub const POPULATION_HEADER: &str = "stratum_id,unit_id,y,x_unit,size";
pub const SAMPLE_HEADER: &str = "stratum_id,unit_id,y,pi,x_stratum";

fn io_err(e: std::io::Error) -> Error {
    Error::data(format!("io error: {e}"))
}

/// Write a population as `stratum_id,unit_id,y,x_unit,size` rows. The size
/// field is empty for strata without size measures.
pub fn write_population_csv<W: Write>(mut w: W, pop: &FinitePopulation) -> Result<()> {
    writeln!(w, "{POPULATION_HEADER}").map_err(io_err)?;
    for s in pop.strata() {
        for (j, &y) in s.units.iter().enumerate() {
            let x = s.unit_x.as_ref().map_or(s.x, |ux| ux[j]);
            let size = s.sizes.as_ref().map_or(String::new(), |sz| sz[j].to_string());
            writeln!(w, "{},{},{},{},{}", s.id, j + 1, y, x, size).map_err(io_err)?;
        }
    }
    Ok(())
}

/// Read a population written by [`write_population_csv`]. Unit rows must be
/// grouped by stratum with ids 1..=H; when every row of a stratum carries the
/// same x the value becomes the stratum index, otherwise the per-unit x is
/// kept and the stratum index is their mean.
pub fn read_population_csv<R: Read>(r: R) -> Result<FinitePopulation> {
    let mut rows: Vec<(usize, f64, f64, Option<f64>)> = Vec::new();
    for (line_no, line) in BufReader::new(r).lines().enumerate() {
        let line = line.map_err(io_err)?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if trimmed == POPULATION_HEADER {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::data(format!(
                "line {}: expected 5 fields ({POPULATION_HEADER}), found {}",
                line_no + 1,
                fields.len()
            )));
        }
        let stratum_id = parse_field::<usize>(fields[0], "stratum_id", line_no)?;
        let _unit_id = parse_field::<usize>(fields[1], "unit_id", line_no)?;
        let y = parse_field::<f64>(fields[2], "y", line_no)?;
        let x = parse_field::<f64>(fields[3], "x_unit", line_no)?;
        let size = if fields[4].is_empty() {
            None
        } else {
            Some(parse_field::<f64>(fields[4], "size", line_no)?)
        };
        rows.push((stratum_id, y, x, size));
    }
    if rows.is_empty() {
        return Err(Error::data("population file has no data rows"));
    }

    let mut strata: Vec<Stratum> = Vec::new();
    let mut current: Vec<(f64, f64, Option<f64>)> = Vec::new();
    let mut current_id = rows[0].0;
    for (id, y, x, size) in rows.into_iter().chain(std::iter::once((0, 0.0, 0.0, None))) {
        if id != current_id && !current.is_empty() {
            strata.push(build_stratum(current_id, std::mem::take(&mut current))?);
            current_id = id;
        }
        current.push((y, x, size));
    }
    FinitePopulation::new(strata)
}

fn build_stratum(id: usize, rows: Vec<(f64, f64, Option<f64>)>) -> Result<Stratum> {
    let ys: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let xs: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let sizes: Option<Vec<f64>> = rows.iter().map(|r| r.2).collect();
    let uniform_x = xs.iter().all(|&x| x == xs[0]);
    let x = if uniform_x { xs[0] } else { xs.iter().sum::<f64>() / xs.len() as f64 };
    let mut s = Stratum::new(id, x, ys)?;
    if let Some(sizes) = sizes {
        s = s.with_sizes(sizes)?;
    }
    if !uniform_x {
        s.unit_x = Some(xs);
    }
    Ok(s)
}

/// Write a drawn sample as `stratum_id,unit_id,y,pi,x_stratum` rows, with the
/// design metadata needed to reconstruct it in a leading comment line.
pub fn write_sample_csv<W: Write>(mut w: W, sample: &DrawnSample) -> Result<()> {
    let sizes: Vec<String> =
        sample.strata.iter().map(|s| s.population_size.to_string()).collect();
    writeln!(
        w,
        "# design={} n_population={} stratum_sizes={}",
        sample.design.as_str(),
        sample.population_size,
        sizes.join(";")
    )
    .map_err(io_err)?;
    writeln!(w, "{SAMPLE_HEADER}").map_err(io_err)?;
    for s in &sample.strata {
        for u in &s.units {
            writeln!(w, "{},{},{},{},{}", s.stratum_id, u.unit_id, u.y, u.pi, s.x)
                .map_err(io_err)?;
        }
    }
    Ok(())
}

/// Read a sample written by [`write_sample_csv`].
pub fn read_sample_csv<R: Read>(r: R) -> Result<DrawnSample> {
    let mut design: Option<DesignKind> = None;
    let mut n_population: Option<usize> = None;
    let mut stratum_sizes: Vec<usize> = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    let mut by_stratum: HashMap<usize, (f64, Vec<SampleUnit>)> = HashMap::new();
    let mut saw_header = false;

    for (line_no, line) in BufReader::new(r).lines().enumerate() {
        let line = line.map_err(io_err)?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            for token in comment.split_whitespace() {
                if let Some(v) = token.strip_prefix("design=") {
                    design = Some(DesignKind::parse(v)?);
                } else if let Some(v) = token.strip_prefix("n_population=") {
                    n_population = Some(parse_field::<usize>(v, "n_population", line_no)?);
                } else if let Some(v) = token.strip_prefix("stratum_sizes=") {
                    stratum_sizes = v
                        .split(';')
                        .map(|t| parse_field::<usize>(t, "stratum_sizes", line_no))
                        .collect::<Result<_>>()?;
                }
            }
            continue;
        }
        if trimmed == SAMPLE_HEADER {
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::data(format!(
                "line {}: expected 5 fields ({SAMPLE_HEADER}), found {}",
                line_no + 1,
                fields.len()
            )));
        }
        let stratum_id = parse_field::<usize>(fields[0], "stratum_id", line_no)?;
        let unit_id = parse_field::<usize>(fields[1], "unit_id", line_no)?;
        let y = parse_field::<f64>(fields[2], "y", line_no)?;
        let pi = parse_field::<f64>(fields[3], "pi", line_no)?;
        let x = parse_field::<f64>(fields[4], "x_stratum", line_no)?;
        let entry = by_stratum.entry(stratum_id).or_insert_with(|| {
            order.push(stratum_id);
            (x, Vec::new())
        });
        if entry.0 != x {
            return Err(Error::data(format!(
                "line {}: stratum {} has inconsistent x_stratum values",
                line_no + 1,
                stratum_id
            )));
        }
        entry.1.push(SampleUnit { unit_id, y, pi });
    }

    if !saw_header {
        return Err(Error::data(format!("missing sample header line '{SAMPLE_HEADER}'")));
    }
    let design = design
        .ok_or_else(|| Error::data("missing '# design=...' metadata in sample file"))?;
    let n_population = n_population
        .ok_or_else(|| Error::data("missing '# n_population=...' metadata in sample file"))?;
    if stratum_sizes.len() != order.len() {
        return Err(Error::data(format!(
            "stratum_sizes metadata lists {} strata, file has {}",
            stratum_sizes.len(),
            order.len()
        )));
    }

    let strata = order
        .iter()
        .zip(stratum_sizes.iter())
        .map(|(id, &population_size)| {
            let (x, units) = by_stratum.remove(id).expect("id collected from map");
            SampleStratum { stratum_id: *id, x, population_size, units }
        })
        .collect();
    let sample = DrawnSample { strata, design, population_size: n_population };
    sample.validate()?;
    Ok(sample)
}

fn parse_field<T: std::str::FromStr>(raw: &str, name: &str, line_no: usize) -> Result<T> {
    raw.parse::<T>().map_err(|_| {
        Error::data(format!("line {}: cannot parse {name} from '{raw}'", line_no + 1))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{draw_pps_systematic, draw_srswor, SamplingPlan};
    use crate::population::{gaussian_population, hmt_population, GaussianPopConfig, HmtPopConfig};
    use crate::rng;

    #[test]
    fn population_round_trip_is_exact() {
        let pop = gaussian_population(&GaussianPopConfig {
            strata: 5,
            stratum_size: 4,
            phi: 2.5,
            seed: 11,
        })
        .unwrap();
        let mut buf = Vec::new();
        write_population_csv(&mut buf, &pop).unwrap();
        let back = read_population_csv(buf.as_slice()).unwrap();
        assert_eq!(pop, back);
    }

    #[test]
    fn hmt_population_round_trip_is_exact() {
        let pop = hmt_population(&HmtPopConfig::new(120, 6, 13)).unwrap();
        let mut buf = Vec::new();
        write_population_csv(&mut buf, &pop).unwrap();
        let back = read_population_csv(buf.as_slice()).unwrap();
        assert_eq!(pop, back);
    }

    #[test]
    fn sample_round_trip_is_exact_for_both_designs() {
        let gauss = gaussian_population(&GaussianPopConfig {
            strata: 6,
            stratum_size: 5,
            phi: 1.0,
            seed: 17,
        })
        .unwrap();
        let plan = SamplingPlan::uniform(DesignKind::Srswor, 2);
        let mut rng = rng::substream_rng(3, 0);
        let sample = draw_srswor(&gauss, &plan, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_sample_csv(&mut buf, &sample).unwrap();
        assert_eq!(read_sample_csv(buf.as_slice()).unwrap(), sample);

        let hmt = hmt_population(&HmtPopConfig::new(100, 5, 19)).unwrap();
        let plan = SamplingPlan::uniform(DesignKind::PpsSystematic, 1);
        let sample = draw_pps_systematic(&hmt, &plan, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_sample_csv(&mut buf, &sample).unwrap();
        assert_eq!(read_sample_csv(buf.as_slice()).unwrap(), sample);
    }

    #[test]
    fn schema_violations_name_the_line() {
        let text = "stratum_id,unit_id,y,pi,x_stratum\n1,1,2.0,0.5\n";
        let err = read_sample_csv(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");

        let text = "# design=srswor n_population=4 stratum_sizes=2;2\n\
                    stratum_id,unit_id,y,pi,x_stratum\n1,1,2.0,oops,0.5\n";
        let err = read_sample_csv(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("pi"), "{err}");
    }

    #[test]
    fn missing_metadata_is_reported() {
        let text = "stratum_id,unit_id,y,pi,x_stratum\n1,1,2.0,0.5,0.5\n";
        let err = read_sample_csv(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("design"), "{err}");
    }
}
