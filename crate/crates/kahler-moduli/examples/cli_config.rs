//! Parses a run configuration, shows the rejection of an unknown key and
//! runs two commands through the library entry point.

use kahler_moduli::cli::{config::RunConfig, run};

fn main() {
    let out = std::env::temp_dir().join("kahler-moduli-example");
    let text = format!("# desk-scale run\nlevel = 2\nn = 2\nseed = 7\nformula.shift = 0.5\noutput = {}\n", out.display());
    let config = RunConfig::parse(&text).expect("valid configuration");
    print!("{}", config.to_kv());
    match RunConfig::parse("level = 2\nlevle = 3\n") {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => println!("typo accepted"),
    }
    let path = std::env::temp_dir().join("kahler-moduli-example.kv");
    std::fs::write(&path, &text).expect("config written");
    let cfg = path.display().to_string();
    for cmd in [&["init"][..], &["hodge"][..]] {
        let mut args = vec!["kahler-moduli", "--config", &cfg];
        args.extend_from_slice(cmd);
        println!("{} → exit {}", cmd.join(" "), run(args));
    }
}
