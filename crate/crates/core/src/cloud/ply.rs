//! ASCII PLY with `x y z` and optional `nx ny nz` vertex properties.

use std::io::{BufRead, Write};

use nalgebra::Vector3;

use super::PointCloud;
use crate::error::{Error, Result};

pub fn write_ply<W: Write>(cloud: &PointCloud, mut out: W) -> Result<()> {
    writeln!(out, "ply\nformat ascii 1.0\nelement vertex {}", cloud.len())?;
    for name in ["x", "y", "z"] {
        writeln!(out, "property double {name}")?;
    }
    if cloud.normals().is_some() {
        for name in ["nx", "ny", "nz"] {
            writeln!(out, "property double {name}")?;
        }
    }
    writeln!(out, "end_header")?;
    for (i, p) in cloud.points().iter().enumerate() {
        write!(out, "{:.16e} {:.16e} {:.16e}", p.x, p.y, p.z)?;
        if let Some(ns) = cloud.normals() {
            let n = ns[i];
            write!(out, " {:.16e} {:.16e} {:.16e}", n.x, n.y, n.z)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_ply<R: BufRead>(input: R) -> Result<PointCloud> {
    let parse = |msg: &str| Error::Parse(format!("ply: {msg}"));
    let mut lines = input.lines();
    let mut next = || -> Result<String> { lines.next().ok_or_else(|| parse("unexpected end of file"))?.map_err(Error::from) };

    if next()?.trim() != "ply" {
        return Err(parse("missing magic"));
    }
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    loop {
        let line = next()?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", _] => {}
            ["format", ..] => return Err(parse("only ascii format is supported")),
            ["comment", ..] | [] => {}
            ["element", "vertex", n] => count = Some(n.parse::<usize>().map_err(|_| parse("bad vertex count"))?),
            ["element", ..] => return Err(parse("unsupported element")),
            ["property", _, name] => props.push(name.to_string()),
            ["end_header"] => break,
            _ => return Err(parse(&format!("unexpected header line `{line}`"))),
        }
    }
    let count = count.ok_or_else(|| parse("no vertex element"))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let xyz = [col("x"), col("y"), col("z")];
    let nxyz = [col("nx"), col("ny"), col("nz")];
    let [Some(ix), Some(iy), Some(iz)] = xyz else {
        return Err(parse("missing x/y/z properties"));
    };
    let has_normals = nxyz.iter().all(Option::is_some);

    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(if has_normals { count } else { 0 });
    for _ in 0..count {
        let line = next()?;
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| parse(&format!("bad number `{v}`"))))
            .collect::<Result<_>>()?;
        if values.len() != props.len() {
            return Err(parse("vertex row has wrong number of values"));
        }
        points.push(Vector3::new(values[ix], values[iy], values[iz]));
        if has_normals {
            let n = Vector3::new(values[nxyz[0].unwrap()], values[nxyz[1].unwrap()], values[nxyz[2].unwrap()]);
            normals.push(n);
        }
    }
    if has_normals {
        PointCloud::with_normals(points, normals)
    } else {
        PointCloud::new(points)
    }
}
