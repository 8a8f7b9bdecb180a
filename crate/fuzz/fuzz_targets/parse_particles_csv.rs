#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = holorecon::io::read_particles_csv(data) {
        let mut out = Vec::new();
        holorecon::io::write_particles_csv(&mut out, table.iter().map(|(h, p)| (*h, p.as_slice()))).unwrap();
        assert_eq!(holorecon::io::read_particles_csv(out.as_slice()).unwrap(), table);
    }
    let _ = holorecon::io::read_predictions_csv(data);
    let _ = holorecon::io::read_detections_csv(data);
});
