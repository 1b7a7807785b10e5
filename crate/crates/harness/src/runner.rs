//! Lockstep execution over the in-process or socket transport. One frame
//! exchange per signal per step, blocking, no pipelining; identical scenario
//! and seed produce identical bytes on both transports.

use std::io::Write as _;
use std::net::{TcpListener, TcpStream};

use kernelguard_core::stats::{empirical_rates, RateReport, WindowedMeanShift};

use crate::adversary::Adversary;
use crate::codec::{read_frame, write_frame, ChannelFrame};
use crate::error::{HarnessError, Result};
use crate::nodes::{MonitorSideNode, PlantSideNode};
use crate::scenario::{Built, Scheme, Transport};

/// One CSV row. Columns are fixed:
/// `k, J, J_th, alarm, ru_norm, r0k_norm, mode, attack_active`.
#[derive(Debug, Clone)]
pub struct StepRow {
    pub k: usize,
    pub j: f64,
    pub j_th: f64,
    pub alarm: bool,
    pub ru_norm: f64,
    pub r0k_norm: f64,
    pub mode: usize,
    pub attack_active: bool,
    pub windowed_alarm: bool,
}

/// Full outcome of one scenario run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub rows: Vec<StepRow>,
    pub rate: RateReport,
    pub windowed_count: usize,
    pub windowed_first: Option<usize>,
    pub csv: String,
}

trait PlantLink {
    fn exchange(&mut self, frame: ChannelFrame) -> Result<Vec<ChannelFrame>>;
}

struct InprocLink {
    node: PlantSideNode,
}

impl PlantLink for InprocLink {
    fn exchange(&mut self, frame: ChannelFrame) -> Result<Vec<ChannelFrame>> {
        self.node.handle(&frame)
    }
}

struct TcpLink {
    stream: TcpStream,
    replies: usize,
}

impl PlantLink for TcpLink {
    fn exchange(&mut self, frame: ChannelFrame) -> Result<Vec<ChannelFrame>> {
        write_frame(&mut self.stream, &frame)?;
        self.stream.flush()?;
        let mut out = Vec::with_capacity(self.replies);
        for _ in 0..self.replies {
            match read_frame(&mut self.stream)? {
                Some(f) => out.push(f),
                None => {
                    return Err(HarnessError::Transport(
                        "plant node closed the channel mid-step".into(),
                    ))
                }
            }
        }
        Ok(out)
    }
}

fn plant_loop(mut stream: TcpStream, mut node: PlantSideNode) -> Result<()> {
    loop {
        match read_frame(&mut stream)? {
            Some(frame) => {
                let replies = node.handle(&frame)?;
                for reply in &replies {
                    write_frame(&mut stream, reply)?;
                }
                stream.flush()?;
            }
            None => return Ok(()),
        }
    }
}

/// Runs the scenario end to end; `transport` overrides the scenario's own.
pub fn run(built: &Built, transport: Option<Transport>) -> Result<RunArtifacts> {
    let transport = transport.unwrap_or_else(|| built.scenario.transport.clone());
    let monitor = MonitorSideNode::build(built)?;
    let plant_node = PlantSideNode::build(built)?;
    let adversary = Adversary::new(built)?;

    match transport {
        Transport::Inproc => {
            let mut link = InprocLink { node: plant_node };
            lockstep(built, monitor, adversary, &mut link)
        }
        Transport::Tcp { host, port } => {
            let listener = TcpListener::bind((host.as_str(), port)).map_err(|e| {
                HarnessError::Transport(format!("cannot bind {host}:{port}: {e}"))
            })?;
            let addr = listener.local_addr().map_err(HarnessError::Io)?;
            let handle = std::thread::spawn(move || -> Result<()> {
                let stream = TcpStream::connect(addr)
                    .map_err(|e| HarnessError::Transport(format!("plant connect: {e}")))?;
                stream.set_nodelay(true).ok();
                plant_loop(stream, plant_node)
            });
            let (stream, _) = listener.accept().map_err(HarnessError::Io)?;
            stream.set_nodelay(true).ok();
            let mut link = TcpLink {
                stream,
                replies: PlantSideNode::replies_per_step(built.scenario.scheme),
            };
            let artifacts = lockstep(built, monitor, adversary, &mut link);
            drop(link); // closes the socket; the plant loop sees a clean EOF
            match handle.join() {
                Ok(Ok(())) => artifacts,
                Ok(Err(e)) => Err(e),
                Err(_) => Err(HarnessError::Transport("plant thread panicked".into())),
            }
        }
    }
}

fn lockstep(
    built: &Built,
    mut monitor: MonitorSideNode,
    mut adversary: Adversary,
    link: &mut dyn PlantLink,
) -> Result<RunArtifacts> {
    let m_dim = built.plant_sys.n_outputs();
    let mut windowed = WindowedMeanShift::new(
        built.scenario.mean_shift_window,
        m_dim,
        built.scenario.alpha,
    );
    let mut rows = Vec::with_capacity(built.horizon);
    for k in 0..built.horizon {
        let mut cmd = monitor.command(k)?;
        adversary.tamper_out(k, &mut cmd);
        let mut replies = link.exchange(cmd)?;
        for frame in &mut replies {
            adversary.tamper_in(k, frame);
        }
        let row = monitor.absorb(k, &replies)?;
        let windowed_alarm = windowed.push(row.j);
        rows.push(StepRow {
            k,
            j: row.j,
            j_th: row.j_th,
            alarm: row.alarm,
            ru_norm: row.ru_norm,
            r0k_norm: row.r0k_norm,
            mode: row.mode,
            attack_active: adversary.active_at(k),
            windowed_alarm,
        });
    }

    let alarms: Vec<bool> = rows.iter().map(|r| r.alarm).collect();
    let rate = empirical_rates(&alarms, built.attack_onset());
    let windowed_count = rows.iter().filter(|r| r.windowed_alarm).count();
    let windowed_first = rows
        .iter()
        .find(|r| r.windowed_alarm)
        .map(|r| r.k);
    let csv = render_csv(&rows);
    Ok(RunArtifacts {
        rows,
        rate,
        windowed_count,
        windowed_first,
        csv,
    })
}

fn render_csv(rows: &[StepRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 48 + 64);
    out.push_str("k,J,J_th,alarm,ru_norm,r0k_norm,mode,attack_active\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.k,
            r.j,
            r.j_th,
            r.alarm as u8,
            r.ru_norm,
            r.r0k_norm,
            r.mode,
            r.attack_active as u8
        ));
    }
    out
}

/// True when the scheme transmits two plant frames per step.
pub fn is_dual_reply(scheme: Scheme) -> bool {
    PlantSideNode::replies_per_step(scheme) == 2
}
