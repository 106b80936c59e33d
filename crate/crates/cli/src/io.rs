use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::failure::Failure;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

// Flags that do not influence output bytes and are left out of the recorded
// invocation, so that reruns into other files or with other thread counts
// stay byte-identical.
const UNRECORDED_FLAGS: [&str; 5] = [
    "--threads",
    "--out",
    "--conns-out",
    "--adus-out",
    "--angles-out",
];

fn unrecorded(arg: &str) -> Option<bool> {
    for flag in UNRECORDED_FLAGS {
        if arg == flag {
            return Some(true);
        }
        if arg
            .strip_prefix(flag)
            .is_some_and(|rest| rest.starts_with('='))
        {
            return Some(false);
        }
    }
    if arg == "-o" {
        return Some(true);
    }
    None
}

pub fn recorded_invocation<I: IntoIterator<Item = String>>(args: I) -> String {
    let mut parts = vec!["flowdep".to_string()];
    let mut skip_next = false;
    for arg in args {
        if skip_next {
            skip_next = false;
            continue;
        }
        match unrecorded(&arg) {
            Some(takes_value) => skip_next = takes_value,
            None => parts.push(arg),
        }
    }
    parts.join(" ")
}

pub fn invocation() -> String {
    recorded_invocation(std::env::args().skip(1))
}

pub fn header_line(invocation: &str) -> String {
    format!("# flowdep {VERSION}: {invocation}")
}

/// Reads a whole input file, or stdin for `-`.
pub fn read_input(path: &Path) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    if path == Path::new("-") {
        io::stdin()
            .read_to_end(&mut buf)
            .map_err(|e| Failure::data(anyhow::anyhow!("cannot read stdin: {e}")))?;
    } else {
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Failure::data(anyhow::anyhow!("cannot read {}: {e}", path.display())))?;
    }
    Ok(buf)
}

pub fn open_input(path: &Path) -> Result<Box<dyn io::BufRead>, Failure> {
    if path == Path::new("-") {
        return Ok(Box::new(io::BufReader::new(io::stdin())));
    }
    let f = File::open(path)
        .map_err(|e| Failure::data(anyhow::anyhow!("cannot read {}: {e}", path.display())))?;
    Ok(Box::new(io::BufReader::new(f)))
}

/// Buffered writer for a file, or stdout when no path (or `-`) is given.
pub fn open_output(path: Option<&PathBuf>) -> Result<Box<dyn Write>, Failure> {
    match path {
        Some(p) if p.as_os_str() != "-" => {
            let f = File::create(p).map_err(|e| {
                Failure::data(anyhow::anyhow!("cannot create {}: {e}", p.display()))
            })?;
            Ok(Box::new(BufWriter::new(f)))
        }
        _ => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
    }
}

pub fn write_failed(e: io::Error) -> Failure {
    Failure::data(anyhow::anyhow!("write failed: {e}"))
}

/// Comma-separated list of non-negative reals.
pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|part| {
            let part = part.trim();
            part.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("`{part}` is not a finite number"))
        })
        .collect::<Result<Vec<_>, _>>()
        .and_then(|v| {
            if v.windows(2).any(|w| w[1] <= w[0]) {
                Err("values must be strictly ascending".to_string())
            } else {
                Ok(v)
            }
        })
}
