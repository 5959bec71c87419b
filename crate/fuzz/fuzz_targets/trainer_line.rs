#![no_main]

use libfuzzer_sys::fuzz_target;
use slidemil::train::parse_trainer_line;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else { return };
    if let Some(Ok(event)) = parse_trainer_line(line) {
        let printed = event.to_line();
        assert!(!printed.contains('\n'));
        let again = parse_trainer_line(&printed).expect("prefix kept").expect("printed line parses");
        assert_eq!(std::mem::discriminant(&again), std::mem::discriminant(&event));
    }
});
