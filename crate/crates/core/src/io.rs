//! Plain-text particle and velocity files: one record per line, `#` starts
//! a comment, blank lines are skipped.

use std::io::{BufRead, Write};

use crate::quadtree::Particle;
use crate::{FmmError, Real, Velocity};

/// Reads "x,y,gamma" rows. Errors carry the 1-based line number of the
/// offending row.
pub fn read_particles<T: Real, R: BufRead>(reader: R) -> Result<Vec<Particle<T>>, FmmError> {
    let mut particles = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let row = match line.find('#') {
            Some(pos) => &line[..pos],
            None => &line[..],
        }
        .trim();
        if row.is_empty() {
            continue;
        }
        let bad = |message: String| FmmError::ParseRow {
            line: idx + 1,
            message,
        };
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(bad(format!(
                "expected 3 comma-separated fields (x,y,gamma), got {}",
                fields.len()
            )));
        }
        let parse = |name: &str, text: &str| -> Result<T, FmmError> {
            let value: f64 = text
                .parse()
                .map_err(|_| bad(format!("{name} is not a number: {text:?}")))?;
            T::from_f64(value).ok_or_else(|| bad(format!("{name} out of range: {text:?}")))
        };
        particles.push(Particle::new(
            parse("x", fields[0])?,
            parse("y", fields[1])?,
            parse("gamma", fields[2])?,
        ));
    }
    Ok(particles)
}

/// Writes "index,u,v" rows in particle order.
pub fn write_velocities<T: Real, W: Write>(
    mut writer: W,
    velocities: &[Velocity<T>],
) -> Result<(), FmmError> {
    for (i, v) in velocities.iter().enumerate() {
        let u = v.re.to_f64().unwrap_or(f64::NAN);
        let w = v.im.to_f64().unwrap_or(f64::NAN);
        writeln!(writer, "{i},{u:e},{w:e}")?;
    }
    Ok(())
}
