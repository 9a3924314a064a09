use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use areval_core::synthetic::{SceneKind, SyntheticSpec};
use areval_sim::{generate, parse_resolution, stream_session, SimError, StreamOptions};

#[derive(Parser)]
#[command(name = "areval-sim", version, about = "Generate synthetic capture sessions and stream them to a server")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic session with exact depth.
    Generate {
        /// ramp, step or orbiting-box
        #[arg(long)]
        scene: SceneKind,
        #[arg(long, default_value_t = 20)]
        frames: u32,
        /// Resolution as WxH.
        #[arg(long, default_value = "640x480", value_parser = parse_resolution)]
        res: (u32, u32),
        /// Storage root to write into.
        #[arg(long)]
        out: PathBuf,
    },
    /// Stream a stored session to a server.
    Stream {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        session: String,
        /// Server URL, e.g. ws://127.0.0.1:8080
        #[arg(long)]
        url: String,
        #[arg(long, default_value_t = 30.0)]
        fps: f64,
        /// Repeat the session until interrupted.
        #[arg(long = "loop")]
        looping: bool,
        /// Announce the session under a different id.
        #[arg(long = "as")]
        target: Option<String>,
    },
}

fn run(cli: Cli) -> Result<(), SimError> {
    match cli.command {
        Command::Generate { scene, frames, res, out } => {
            let id = generate(&out, &SyntheticSpec::new(scene, frames, res.0, res.1))?;
            println!("{id}");
        }
        Command::Stream {
            root,
            session,
            url,
            fps,
            looping,
            target,
        } => {
            let mut opts = StreamOptions::new(root, &session, &url, fps);
            opts.passes = if looping { 0 } else { 1 };
            opts.target_session = target;
            let s = stream_session(&opts)?;
            println!(
                "frames_sent={} bytes_sent={} acks_received={} mean_interframe_ms={:.3}",
                s.frames_sent, s.bytes_sent, s.acks_received, s.mean_interframe_ms
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                SimError::ConnectionRefused { .. } => ExitCode::from(3),
                SimError::LayoutError(_) => ExitCode::from(4),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
