#![no_main]

use libfuzzer_sys::fuzz_target;

// Header text, then a NUL, then the payload.
fuzz_target!(|data: &[u8]| {
    let (head, body) = match data.iter().position(|&b| b == 0) {
        Some(k) => (&data[..k], &data[k + 1..]),
        None => (data, &[][..]),
    };
    let Ok(text) = std::str::from_utf8(head) else { return };
    if let Ok(header) = holorecon::io::parse_raw_header(text) {
        let again = holorecon::io::parse_raw_header(&header.to_text()).expect("own output parses");
        assert_eq!(format!("{again:?}"), format!("{header:?}"));
        if let Ok(plane) = holorecon::io::decode_raw_f32(&header, body) {
            assert_eq!(plane.dim(), (header.ny, header.nx));
        }
    }
});
