use perfusim::coupling::*;
use perfusim::flow1d::Fluid;
use perfusim::geometry::structured::box_mesh;
use perfusim::geometry::{CellField, SymTensor3};
use perfusim::upscale::*;
use perfusim::vtree::{build_synthetic_tree, TreeSpec};

fn main() {
    env_logger::init();
    let mesh = box_mesh([0.0; 3], [0.1, 0.08, 0.06], [6, 5, 4]).unwrap();
    let nc = mesh.cell_count();
    let comp = |id, group, hierarchy| CompartmentSpec { id, group, diameter_range: (0.0, 1.0), hierarchy };
    let params = PerfusionParams {
        compartments: vec![
            comp(0, CompartmentGroup::Portal, 1),
            comp(1, CompartmentGroup::Filtration, 0),
            comp(2, CompartmentGroup::Hepatic, 1),
        ],
        permeability: (0..3).map(|c| CellField::tensor(c, vec![SymTensor3::isotropic(1e-8); nc])).collect(),
        porosity: (0..3).map(|c| CellField::scalar(c, vec![1e-3; nc])).collect(),
        exchange: vec![
            ExchangePair { lo: 0, hi: 1, g: CellField::scalar(0, vec![1e-6; nc]) },
            ExchangePair { lo: 1, hi: 2, g: CellField::scalar(1, vec![1e-6; nc]) },
        ],
    };
    let spec = |seed: u64, from_min: bool| TreeSpec {
        depth: 2, root_diameter: 4e-3, diameter_ratio: 0.8, length_diameter_ratio: 8.0,
        region_min: if from_min { [0.0, 0.0, 0.0] } else { [0.05, 0.0, 0.0] },
        region_max: if from_min { [0.05, 0.08, 0.06] } else { [0.1, 0.08, 0.06] },
        seed, tortuosity: 1.1,
    };
    let portal = build_synthetic_tree(&spec(3, true)).unwrap();
    let hepatic = build_synthetic_tree(&spec(9, false)).unwrap();
    let options = CouplingOptions { tolerance: 1e-8, ..Default::default() };
    match couple_steady(&portal, &hepatic, &mesh, &params, Fluid::default(), 0.05, 800.0, &options) {
        Ok(st) => println!("converged in {} iterations", st.outer_iterations),
        Err(e) => println!("ERR {e}"),
    }
}
