//! Plot-ready text outputs: field CSVs, tables and JSON summaries.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::SlabMesh;
use crate::util::fmt_g17;

/// Writes artifacts below one output directory and remembers their relative paths.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).is_file()
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<String> {
        let path = self.path(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        Ok(name.to_string())
    }

    pub fn read(&self, name: &str) -> Result<String> {
        let path = self.path(name);
        std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<String> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        Ok(serde_json::from_str(&self.read(name)?)?)
    }

    pub fn write_field(&self, name: &str, mesh: &SlabMesh, values: &[f64]) -> Result<String> {
        self.write(name, &field_csv(mesh, values))
    }

    pub fn read_field(&self, name: &str, mesh: &SlabMesh) -> Result<Vec<f64>> {
        parse_field_csv(&self.read(name)?, mesh)
    }
}

const AXES: [&str; 3] = ["x", "y", "z"];

/// `x,y[,z],value`, one node per line.
pub fn field_csv(mesh: &SlabMesh, values: &[f64]) -> String {
    let d = mesh.dim();
    let mut s = String::with_capacity(values.len() * 60);
    s.push_str(&AXES[..d].join(","));
    s.push_str(",value\n");
    for (i, v) in values.iter().enumerate() {
        for c in mesh.node(i) {
            s.push_str(&fmt_g17(*c));
            s.push(',');
        }
        s.push_str(&fmt_g17(*v));
        s.push('\n');
    }
    s
}

/// Parse a field CSV written for `mesh`; coordinates must match its nodes.
pub fn parse_field_csv(text: &str, mesh: &SlabMesh) -> Result<Vec<f64>> {
    let d = mesh.dim();
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let expect = format!("{},value", AXES[..d].join(","));
    if header != expect {
        return Err(Error::invalid(format!("field header '{header}', expected '{expect}'")));
    }
    let mut values = Vec::with_capacity(mesh.n_nodes());
    for (i, line) in lines.enumerate() {
        let cols: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(format!("field line {}: {e}", i + 2)))?;
        if cols.len() != d + 1 || i >= mesh.n_nodes() {
            return Err(Error::invalid(format!("field line {} does not match the mesh", i + 2)));
        }
        if cols[..d].iter().zip(mesh.node(i)).any(|(a, b)| (a - b).abs() > 1e-12) {
            return Err(Error::invalid(format!("field line {} has coordinates of another mesh", i + 2)));
        }
        values.push(cols[d]);
    }
    if values.len() != mesh.n_nodes() {
        return Err(Error::invalid(format!(
            "field has {} values, mesh has {} nodes",
            values.len(),
            mesh.n_nodes()
        )));
    }
    Ok(values)
}

/// Generic table with a header and `%.17g` floats.
pub fn table_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| fmt_g17(*v)).collect();
        let _ = writeln!(s, "{}", cells.join(","));
    }
    s
}
