//! OFF meshes to point clouds, and a class-per-directory OFF dataset with
//! nested low-data subsets.
//!
//! cargo run --release --example off_data

use ppt::data::{Dataset, Mesh, Split};

const TETRA: &str = "OFF\n4 4 6\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n";
const PRISM: &str = "OFF\n6 5 0\n0 0 0\n1 0 0\n0 1 0\n0 0 2\n1 0 2\n0 1 2\n3 0 1 2\n3 3 4 5\n4 0 1 4 3\n4 1 2 5 4\n4 2 0 3 5\n";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mesh = Mesh::parse_off(TETRA)?;
    let areas: Vec<String> = (0..mesh.faces.len()).map(|f| format!("{:.3}", mesh.triangle_area(f))).collect();
    println!("tetrahedron: {} vertices, face areas {areas:?}", mesh.vertices.len());
    let cloud = mesh.sample_surface(512, 0)?;
    println!("sampled {} points, centroid {:?}, max norm {:.3}", cloud.len(), cloud.centroid().map(|c| (c * 1e9).round() / 1e9), cloud.max_norm());

    match Mesh::parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n") {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!(),
    }

    let root = std::env::temp_dir().join(format!("ppt-off-example-{}", std::process::id()));
    for (class, text) in [("pyramid", TETRA), ("prism", PRISM)] {
        for split in ["train", "test"] {
            let dir = root.join(class).join(split);
            std::fs::create_dir_all(&dir)?;
            for i in 0..10 {
                std::fs::write(dir.join(format!("{class}_{i:02}.off")), text)?;
            }
        }
    }
    let ds = Dataset::load_off_dir(&root, 256, 0)?;
    println!("dataset classes {:?}, train {:?}, test {:?}", ds.class_names, ds.class_counts(Split::Train), ds.class_counts(Split::Test));
    for fraction in [0.1, 0.5, 1.0] {
        println!("fraction {fraction}: train {:?}", ds.fraction(fraction, 0)?.class_counts(Split::Train));
    }
    println!("2-shot train ids {:?}", ds.few_shot(2, 0)?.ids(Split::Train));
    std::fs::remove_dir_all(&root)?;
    Ok(())
}
