fn main() {
    std::process::exit(midi_draw::cli::run(std::env::args_os()));
}
