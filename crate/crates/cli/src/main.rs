//! Command-line front end: runs scenarios, edits scenario files and compares
//! event logs.

mod edit;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use cloudsched::image_repo::ImageRepo;
use cloudsched::model::{
    CloudFamily, CloudSite, CloudStatus, CredentialKind, Hypervisor, ImageVariant,
};
use cloudsched::scenario::{Fault, ImageEntry, JobEntry};
use cloudsched::{Scenario, ScenarioError, SimError, Summary};

use crate::edit::ScenarioDoc;

#[derive(Parser)]
#[command(
    name = "cloudsched",
    version,
    about = "Simulated multi-cloud batch scheduler"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write events.log, samples.csv and summary.json.
    Run {
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Append a job, given as an inline TOML table, to a scenario.
    Submit {
        scenario: PathBuf,
        #[arg(long)]
        inline: String,
    },
    /// Print the summary of a finished run.
    Status { run_dir: PathBuf },
    /// Add, remove or take down a cloud.
    Cloud {
        #[command(subcommand)]
        action: CloudAction,
    },
    /// Instance administration.
    Vm {
        #[command(subcommand)]
        action: VmAction,
    },
    /// Image catalog.
    Image {
        #[command(subcommand)]
        action: ImageAction,
    },
    /// Compare two event logs byte for byte.
    Replay { a: PathBuf, b: PathBuf },
}

#[derive(Args)]
struct Target {
    /// Scenario file to edit.
    #[arg(long)]
    scenario: PathBuf,
}

#[derive(Subcommand)]
enum CloudAction {
    Add {
        name: String,
        #[command(flatten)]
        target: Target,
        #[arg(long, value_parser = parse_family)]
        family: CloudFamily,
        #[arg(long)]
        hypervisor: Hypervisor,
        #[arg(long)]
        cores: u32,
        /// Defaults to 4 GiB per core.
        #[arg(long)]
        memory_mb: Option<u64>,
        #[arg(long, default_value_t = 0)]
        scratch_gb: u64,
        #[arg(long)]
        no_scratch_safeguard: bool,
        #[arg(long, default_value_t = 120)]
        boot_delay: u64,
        #[arg(long, default_value_t = 0)]
        priority: i64,
        /// Required for openstack-like clouds.
        #[arg(long)]
        group_key: Option<String>,
    },
    Remove {
        name: String,
        #[command(flatten)]
        target: Target,
    },
    /// Put a cloud into maintenance, now or at a given time.
    Maintain {
        name: String,
        #[command(flatten)]
        target: Target,
        /// Bring the cloud back instead.
        #[arg(long)]
        off: bool,
        /// Schedule the change during the run rather than at the start.
        #[arg(long)]
        at: Option<u64>,
        /// With --at, also shut down the cloud's instances.
        #[arg(long, requires = "at")]
        kill_instances: bool,
    },
}

#[derive(Subcommand)]
enum VmAction {
    /// Schedule an administrator stop of an instance.
    Stop {
        vm_id: String,
        #[arg(long)]
        at: u64,
        #[command(flatten)]
        target: Target,
    },
}

#[derive(Subcommand)]
enum ImageAction {
    /// Save a new image; it appears in the catalog once the save finishes.
    Save {
        image_id: String,
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        owner: String,
        #[arg(long)]
        size_gb: f64,
        /// `hypervisor=location`, repeatable.
        #[arg(long = "variant", value_parser = parse_variant, required = true)]
        variants: Vec<ImageVariant>,
        #[arg(long, default_value_t = 0)]
        at: u64,
    },
    List {
        #[command(flatten)]
        target: Target,
        /// Show only images visible at this time.
        #[arg(long)]
        at: Option<u64>,
    },
}

fn parse_family(s: &str) -> Result<CloudFamily, String> {
    match s {
        "nimbus-like" => Ok(CloudFamily::NimbusLike),
        "openstack-like" => Ok(CloudFamily::OpenstackLike),
        other => Err(format!("unknown cloud family {other:?}")),
    }
}

fn parse_variant(s: &str) -> Result<ImageVariant, String> {
    let (hv, location) = s
        .split_once('=')
        .ok_or_else(|| format!("expected hypervisor=location, got {s:?}"))?;
    Ok(ImageVariant {
        hypervisor: hv.parse()?,
        location: location.to_string(),
    })
}

/// Failure classes map onto exit codes.
enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::Invalid(e.into())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = Result<ExitCode, Failure>;

fn invalid(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Invalid(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> Outcome {
    match command {
        Command::Run {
            scenario,
            seed,
            out,
        } => run(&scenario, seed, &out),
        Command::Submit { scenario, inline } => submit(&scenario, &inline),
        Command::Status { run_dir } => status(&run_dir),
        Command::Cloud { action } => cloud(action),
        Command::Vm {
            action: VmAction::Stop { vm_id, at, target },
        } => {
            let mut doc = ScenarioDoc::open(&target.scenario)?;
            doc.push(
                "faults",
                &Fault::VMStop {
                    time: at,
                    vm_id: vm_id.clone(),
                },
            )?;
            doc.save()?;
            println!("scheduled stop of {vm_id} at t={at}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Image { action } => image(action),
        Command::Replay { a, b } => replay(&a, &b),
    }
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::Runtime)?;
    Ok(Scenario::from_toml(&text)?)
}

fn run(path: &Path, seed: Option<u64>, out: &Path) -> Outcome {
    let mut scenario = load(path)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let output = cloudsched::run(&scenario).map_err(|e| match e {
        SimError::Scenario(e) => invalid(e),
        other => runtime(other),
    })?;
    fs::create_dir_all(out)
        .with_context(|| format!("cannot create {}", out.display()))
        .map_err(Failure::Runtime)?;
    fs::write(out.join("events.log"), output.log.to_text())?;
    fs::write(out.join("samples.csv"), output.report.samples_csv())?;
    fs::write(out.join("summary.json"), output.report.summary.to_json())?;
    let s = &output.report.summary;
    println!(
        "completed {}/{} jobs by t={}; wrote {}",
        s.completed,
        s.completed + s.failed,
        s.end_time,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn submit(path: &Path, inline: &str) -> Outcome {
    #[derive(serde::Deserialize)]
    struct Wrapper {
        job: JobEntry,
    }
    let job = toml::from_str::<Wrapper>(&format!("job = {inline}"))
        .map_err(|e| anyhow!("bad job spec: {}", e.message()))
        .map_err(Failure::Invalid)?
        .job;
    let mut doc = ScenarioDoc::open(path)?;
    doc.push("workload.jobs", &job)?;
    doc.save()?;
    println!(
        "appended {} job(s) for {} to {}",
        job.count,
        job.owner,
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn status(dir: &Path) -> Outcome {
    let path = dir.join("summary.json");
    let text = fs::read_to_string(&path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::Runtime)?;
    let s: Summary = serde_json::from_str(&text)
        .with_context(|| format!("{} is not a run summary", path.display()))
        .map_err(Failure::Invalid)?;
    println!(
        "seed {}  ended t={}  horizon {}",
        s.seed, s.end_time, s.horizon
    );
    let states: Vec<String> = s
        .jobs_by_state
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    println!("jobs: {}", states.join(" "));
    println!(
        "efficiency {:.4}  queue wait mean {:.0}s p95 {:.0}s",
        s.aggregate_efficiency, s.mean_queue_wait, s.p95_queue_wait
    );
    println!(
        "{:<16} {:>9} {:>7} {:>9}",
        "cloud", "completed", "share", "instances"
    );
    for (cloud, n) in &s.per_cloud_completed {
        println!(
            "{:<16} {:>9} {:>7.3} {:>9}",
            cloud,
            n,
            s.per_cloud_share.get(cloud).copied().unwrap_or(0.0),
            s.final_instances_per_cloud.get(cloud).copied().unwrap_or(0)
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cloud(action: CloudAction) -> Outcome {
    match action {
        CloudAction::Add {
            name,
            target,
            family,
            hypervisor,
            cores,
            memory_mb,
            scratch_gb,
            no_scratch_safeguard,
            boot_delay,
            priority,
            group_key,
        } => {
            let site = CloudSite {
                name: name.clone(),
                family,
                hypervisor,
                total_cores: cores,
                total_memory_mb: memory_mb.unwrap_or(cores as u64 * 4096),
                scratch_pool_gb: scratch_gb,
                scratch_safeguard: !no_scratch_safeguard,
                status: CloudStatus::Active,
                auth_mode: match family {
                    CloudFamily::NimbusLike => CredentialKind::PerUserProxy,
                    CloudFamily::OpenstackLike => CredentialKind::SharedGroupKey,
                },
                boot_fixed_delay: boot_delay,
                image_bandwidth_gb_per_s: 0.05,
                priority,
                group_key,
                vm_lifetime: None,
            };
            let mut doc = ScenarioDoc::open(&target.scenario)?;
            doc.push("clouds", &site)?;
            doc.save()?;
            println!("added cloud {name}");
        }
        CloudAction::Remove { name, target } => {
            let mut doc = ScenarioDoc::open(&target.scenario)?;
            doc.remove_named("clouds", "name", &name)?;
            doc.save()?;
            println!("removed cloud {name}");
        }
        CloudAction::Maintain {
            name,
            target,
            off,
            at,
            kill_instances,
        } => {
            let mut doc = ScenarioDoc::open(&target.scenario)?;
            match at {
                Some(time) => doc.push(
                    "faults",
                    &Fault::CloudMaintenance {
                        time,
                        cloud: name.clone(),
                        on: !off,
                        kill_instances,
                    },
                )?,
                None => {
                    let status = if off { "Active" } else { "Maintenance" };
                    doc.set_named("clouds", "name", &name, "status", status)?;
                }
            }
            doc.save()?;
            let what = if off {
                "back in service"
            } else {
                "in maintenance"
            };
            match at {
                Some(t) => println!("cloud {name} {what} from t={t}"),
                None => println!("cloud {name} {what}"),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn image(action: ImageAction) -> Outcome {
    match action {
        ImageAction::Save {
            image_id,
            target,
            owner,
            size_gb,
            variants,
            at,
        } => {
            let entry = ImageEntry {
                image_id: image_id.clone(),
                owner: owner.try_into().map_err(invalid)?,
                size_gb,
                variants,
                cold_stagein: cloudsched::software_cache::DEFAULT_COLD_STAGEIN,
                warm_stagein: cloudsched::software_cache::DEFAULT_WARM_STAGEIN,
                save_at: Some(at),
            };
            let ready = entry.available_at();
            let mut doc = ScenarioDoc::open(&target.scenario)?;
            doc.push("images", &entry)?;
            doc.save()?;
            println!("saving {image_id}; available at t={ready}");
        }
        ImageAction::List { target, at } => {
            let scenario = load(&target.scenario)?;
            let mut repo = ImageRepo::new();
            for e in &scenario.images {
                repo.register(e.image(), e.available_at())
                    .map_err(invalid)?;
            }
            println!(
                "{:<20} {:<12} {:>8} {:<10} {:>12}",
                "id", "owner", "size_gb", "hypervisors", "available_at"
            );
            for row in repo.list() {
                if at.is_some_and(|t| row.available_at > t) {
                    continue;
                }
                let hvs: Vec<String> = row.hypervisors.iter().map(ToString::to_string).collect();
                println!(
                    "{:<20} {:<12} {:>8.1} {:<10} {:>12}",
                    row.image_id,
                    row.owner,
                    row.size_gb,
                    hvs.join(","),
                    row.available_at
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn replay(a: &Path, b: &Path) -> Outcome {
    let read = |p: &Path| {
        fs::read(p)
            .with_context(|| format!("cannot read {}", p.display()))
            .map_err(Failure::Runtime)
    };
    let (left, right) = (read(a)?, read(b)?);
    if left == right {
        let lines = left.iter().filter(|&&c| c == b'\n').count();
        println!("identical ({lines} lines)");
        return Ok(ExitCode::SUCCESS);
    }
    let la: Vec<&[u8]> = left.split(|&c| c == b'\n').collect();
    let lb: Vec<&[u8]> = right.split(|&c| c == b'\n').collect();
    let i = la
        .iter()
        .zip(&lb)
        .position(|(x, y)| x != y)
        .unwrap_or(la.len().min(lb.len()));
    let show = |v: &[&[u8]]| {
        v.get(i).map_or("<end of file>".into(), |l| {
            String::from_utf8_lossy(l).into_owned()
        })
    };
    println!("logs differ at line {}", i + 1);
    println!("< {}", show(&la));
    println!("> {}", show(&lb));
    Ok(ExitCode::from(1))
}
