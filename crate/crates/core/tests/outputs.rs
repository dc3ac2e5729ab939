use lcnfem::harness::{convergence_study, preset, run_experiment, TauSelection, CONVERGENCE_HEADER};
use lcnfem::FlowStatus;
use vtkio::model::{Attribute, CellType, DataSet, Piece, VertexNumbers};
use vtkio::Vtk;

#[test]
fn surface_file_parses_as_legacy_vtk() {
    let dir = tempfile::tempdir().unwrap();
    let spec = preset("experiment1").unwrap().with_resolution(4);
    let result = run_experiment(&spec, Some(dir.path()), false).unwrap();
    assert_eq!(result.summary.status, FlowStatus::Converged);
    let y = result.deformation();

    let vtk = Vtk::import(dir.path().join("experiment1_n4.vtk")).unwrap();
    let DataSet::UnstructuredGrid { pieces, .. } = vtk.data else {
        panic!("expected an unstructured grid");
    };
    let Piece::Inline(piece) = &pieces[0] else {
        panic!("expected inline data");
    };
    let points: Vec<f64> = piece.points.clone().cast_into().unwrap();
    assert_eq!(points, y.dofs());
    assert!(piece.cells.types.iter().all(|t| *t == CellType::Triangle));
    let VertexNumbers::Legacy { num_cells, vertices } = &piece.cells.cell_verts else {
        panic!("expected legacy connectivity");
    };
    let mesh = &result.experiment.mesh;
    assert_eq!(*num_cells as usize, mesh.num_triangles());
    for (cell, tri) in vertices.chunks(4).zip(mesh.triangles()) {
        assert_eq!(cell[0], 3);
        assert_eq!(cell[1..].iter().map(|&v| v as usize).collect::<Vec<_>>(), tri);
    }
    let Attribute::DataArray(heights) = &piece.data.point[0] else {
        panic!("expected point scalars");
    };
    let z: Vec<f64> = heights.data.clone().cast_into().unwrap();
    assert_eq!(z, (0..y.num_vertices()).map(|v| y.point(v)[2]).collect::<Vec<_>>());
}

#[test]
fn convergence_table_csv_layout() {
    let spec = preset("experiment1").unwrap();
    let table = convergence_study(&spec, &[2, 4, 8], TauSelection::Fixed(0.8), false).unwrap();
    let mut buf = Vec::new();
    table.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CONVERGENCE_HEADER.join(","));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][0], "0.25");
    assert_eq!(rows[1][0], "0.125");
    assert_eq!(rows[2][0], "0.0625");
    assert!(rows.iter().all(|r| r[4] == "0.8" && r[5] == "converged"));
}
