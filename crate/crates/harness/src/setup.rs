//! Meshes, materials and solver objects built from a [`RunConfig`].

use std::collections::BTreeMap;
use std::sync::Arc;

use csahomog_core::macroscale::{LoadCase, MacroProblem, MacroSettings};
use csahomog_core::material::NeoHookean;
use csahomog_core::mesh::builders::{lshape, uniform_cell, InclusionCell};
use csahomog_core::mesh::{load_mesh, write_mesh, Mesh};
use csahomog_core::micro::{CellProblem, MicroSettings};
use sha2::{Digest, Sha256};

use crate::config::{MeshSource, RunConfig};
use crate::HarnessError;

pub const MACRO_BUILTINS: &[&str] = &["lshape", "lshape-fine"];
pub const MICRO_BUILTINS: &[&str] = &["cell-tiny", "cell-coarse", "cell-fine", "cell-uniform"];

pub fn builtin_mesh(name: &str) -> Option<Mesh<f64>> {
    Some(match name {
        "lshape" => lshape(1),
        "lshape-fine" => lshape(2),
        "cell-tiny" => InclusionCell::tiny().build(),
        "cell-coarse" => InclusionCell::coarse().build(),
        "cell-fine" => InclusionCell::fine().build(),
        "cell-uniform" => uniform_cell(4, 4),
        _ => return None,
    })
}

fn mesh_from(source: &MeshSource, what: &str) -> Result<Mesh<f64>, HarnessError> {
    match source {
        MeshSource::Builtin(name) => builtin_mesh(name).ok_or_else(|| {
            HarnessError::Setup(format!(
                "{what}: unknown built-in mesh '{name}' (known: {})",
                MACRO_BUILTINS.iter().chain(MICRO_BUILTINS).copied().collect::<Vec<_>>().join(", ")
            ))
        }),
        MeshSource::File(path) => load_mesh(path).map_err(|e| HarnessError::Setup(format!("{what} {}: {e}", path.display()))),
    }
}

fn digest(parts: &[&str]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    h.finalize().into()
}

/// Everything a run needs that does not depend on the method.
pub struct Setup {
    pub macro_mesh: Mesh<f64>,
    pub micro_mesh: Mesh<f64>,
    pub materials: BTreeMap<u32, NeoHookean<f64>>,
    /// Canonical text of the macroscopic mesh, hashed.
    pub macro_checksum: [u8; 32],
    /// Cell mesh and materials, hashed; keys reduced bases.
    pub cell_checksum: [u8; 32],
    /// Both meshes, materials and the load case, hashed; runs are comparable
    /// only when these agree.
    pub case_checksum: [u8; 32],
}

impl Setup {
    pub fn new(config: &RunConfig) -> Result<Self, HarnessError> {
        let macro_mesh = mesh_from(&config.macro_mesh, "macro_mesh")?;
        let micro_mesh = mesh_from(&config.micro_mesh, "micro_mesh")?;
        let mut materials = BTreeMap::new();
        for (&region, &(bulk, shear)) in &config.materials {
            let m = NeoHookean::new(bulk, shear).map_err(|e| HarnessError::Setup(format!("material.{region}: {e}")))?;
            materials.insert(region, m);
        }
        let macro_text = write_mesh(&macro_mesh);
        let micro_text = write_mesh(&micro_mesh);
        let material_text: String =
            config.materials.iter().map(|(r, (k, m))| format!("{r} {k:e} {m:e}\n")).collect();
        let l = &config.load;
        let load_text = format!("{} {} {:e} {:e} {}", l.clamped, l.loaded, l.peak, l.height, config.steps);
        Ok(Self {
            macro_checksum: digest(&[&macro_text]),
            cell_checksum: digest(&[&micro_text, &material_text]),
            case_checksum: digest(&[&macro_text, &micro_text, &material_text, &load_text]),
            macro_mesh,
            micro_mesh,
            materials,
        })
    }

    pub fn cell_problem(&self, config: &RunConfig, sensitivities: bool) -> Result<Arc<CellProblem<f64>>, HarnessError> {
        let settings = MicroSettings {
            tolerance: config.micro_tolerance,
            max_iterations: config.micro_max_iterations,
            sensitivities,
            ..Default::default()
        };
        CellProblem::new(&self.micro_mesh, &self.materials, settings)
            .map(Arc::new)
            .map_err(|e| HarnessError::Setup(format!("micro_mesh: {e}")))
    }

    pub fn load_case(config: &RunConfig) -> LoadCase<f64> {
        let l = &config.load;
        LoadCase::bending(l.clamped, l.loaded, l.peak, l.height, config.steps)
    }

    pub fn macro_problem(&self, config: &RunConfig) -> Result<MacroProblem<f64>, HarnessError> {
        let settings = MacroSettings {
            tolerance: config.macro_tolerance,
            max_iterations: config.macro_max_iterations,
            stall_window: config.stall_window,
        };
        Ok(MacroProblem::new(self.macro_mesh.clone(), Self::load_case(config), settings)?)
    }
}
