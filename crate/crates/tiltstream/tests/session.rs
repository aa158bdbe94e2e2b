use std::net::TcpStream;
use std::thread;

use tempfile::TempDir;
use tiltstream::config::{DamageConfig, PhantomConfig, SessionConfig};
use tiltstream::io;
use tiltstream::session::{EndReason, Session, SessionOutcome, StopRecord, EVENTS_FILE, STOP_FILE};
use tiltstream::stream::ControlScript;
use tiltstream::wire::{self, ControlCommand, Event, EventKind};
use tiltstream_core::recon::SliceSpec;

fn config(dir: &TempDir) -> SessionConfig {
    SessionConfig {
        seed: 3,
        em_iterations: 5,
        output_dir: Some(dir.path().join("run")),
        phantom: PhantomConfig::Nanocage { size: 32, outer_radius: None, wall_thickness: None, opening_radius: None },
        damage: DamageConfig::preset("NC-3"),
        ..SessionConfig::default()
    }
}

fn run(config: SessionConfig, script: ControlScript) -> SessionOutcome {
    Session::new(config).unwrap().with_script(script).run().unwrap()
}

fn of_kind(events: &[Event], kind: EventKind) -> Vec<&Event> {
    events.iter().filter(|e| e.kind == kind).collect()
}

#[test]
fn full_run_emits_ordered_events_and_artifacts() {
    let dir = TempDir::new().unwrap();
    let out = run(config(&dir), ControlScript::new());
    let ev = &out.events;
    assert_eq!(of_kind(ev, EventKind::ProjectionAdded).len(), 71);
    assert_eq!(of_kind(ev, EventKind::SlicesUpdated).len(), 71);
    assert_eq!(of_kind(ev, EventKind::MetricsUpdated).len(), 71);
    assert!(of_kind(ev, EventKind::HistoryRestarted).is_empty());
    assert!(ev.windows(2).all(|w| w[0].order_key() <= w[1].order_key()), "events out of order");
    let last = ev.last().unwrap();
    assert_eq!(last.kind, EventKind::SessionEnded);
    assert_eq!(last.payload["reason"], "exhausted");
    assert_eq!(out.stop.reason, EndReason::Exhausted);
    assert_eq!(out.stop.n_used, out.stop.recommendation.suggested_n.unwrap_or(71));

    let metrics = of_kind(ev, EventKind::MetricsUpdated);
    assert!(metrics[0].payload["srod"].is_null());
    assert!(metrics.iter().skip(1).all(|e| e.payload["srod"].is_f64()));
    assert_eq!(metrics[4].payload["threshold"], 0.1);

    let suggested = of_kind(ev, EventKind::StopSuggested);
    if let Some(s) = suggested.last() {
        assert_eq!(s.payload["suggested_n"], serde_json::json!(out.stop.recommendation.suggested_n));
    }

    let dir = &out.output_dir;
    io::verify_manifest(dir).unwrap();
    let logged = tiltstream::session::read_event_log(&dir.join(EVENTS_FILE)).unwrap();
    assert_eq!(&logged, ev);
    let stop: StopRecord = io::read_json(&dir.join(STOP_FILE)).unwrap();
    assert_eq!(stop, out.stop);
    let series = io::load_tilt_series(&dir.join("series")).unwrap();
    assert_eq!(series, out.series);
    let (em, meta) = io::load_volume(&dir.join("em.f32")).unwrap();
    assert_eq!(Some(&em), out.reconstruction.as_ref());
    assert_eq!(meta.extra["n_used"], serde_json::json!(out.stop.n_used));
}

#[test]
fn reorient_restarts_history_at_the_next_projection() {
    let dir = TempDir::new().unwrap();
    let script = ControlScript::new().at(30, ControlCommand::Reorient { slices: SliceSpec::rotated_set(45.0).to_vec() });
    let out = run(config(&dir), script.clone());
    let restarts = of_kind(&out.events, EventKind::HistoryRestarted);
    assert_eq!(restarts.len(), 1);
    assert_eq!(restarts[0].n, 31);
    let m31 = out.events.iter().find(|e| e.kind == EventKind::MetricsUpdated && e.n == 31).unwrap();
    assert!(m31.payload["srod"].is_null());
    assert_eq!(m31.payload["restarted"], true);
    let s31 = out.events.iter().find(|e| e.kind == EventKind::SlicesUpdated && e.n == 31).unwrap();
    assert_eq!(s31.payload["slices"][0]["rotation_deg"], 45.0);
    assert_eq!(out.trace.last_restart(), 31);
    let ack = of_kind(&out.events, EventKind::ControlAck);
    assert_eq!(ack[0].n, 30);
    assert_eq!(ack[0].payload["status"], "applied");
    assert_eq!(out.controls, script);
    // decisions only look past the restart
    if let Some(n) = out.stop.recommendation.suggested_n {
        assert!(n >= 31);
    }
}

#[test]
fn stop_command_ends_the_session_with_what_was_acquired() {
    let dir = TempDir::new().unwrap();
    let out = run(config(&dir), ControlScript::new().at(40, ControlCommand::Stop));
    assert_eq!(out.stop.reason, EndReason::Stopped);
    assert_eq!(out.stop.n_acquired, 40);
    assert_eq!(out.stop.n_used, 40);
    assert_eq!(out.series.len(), 40);
    let end = out.events.last().unwrap();
    assert_eq!((end.kind, end.n), (EventKind::SessionEnded, 40));
    assert_eq!(end.payload["n_used"], 40);
    assert_eq!(of_kind(&out.events, EventKind::ProjectionAdded).len(), 40);
}

#[test]
fn invalid_commands_are_reported_and_ignored() {
    let dir = TempDir::new().unwrap();
    let session = Session::new(config(&dir)).unwrap();
    let control = session.controller();
    control.send_raw(br#"{"command":"explode"}"#);
    control.send(ControlCommand::Reorient { slices: vec![SliceSpec::default_set()[0]] });
    control.send(ControlCommand::Continue);
    let out = session.run().unwrap();
    let errors = of_kind(&out.events, EventKind::Error);
    assert_eq!(errors.len(), 2);
    assert!(errors[0].payload["message"].as_str().unwrap().contains("invalid control command"));
    assert!(errors[1].payload["message"].as_str().unwrap().contains("exactly 3"));
    let acks = of_kind(&out.events, EventKind::ControlAck);
    assert_eq!(acks.len(), 1);
    assert_eq!(acks[0].payload["command"], "continue");
    assert_eq!(acks[0].payload["status"], "no_op");
    assert_eq!(out.stop.n_acquired, 71);
    assert!(of_kind(&out.events, EventKind::HistoryRestarted).is_empty());
    // rejected commands are not part of the replayable record
    assert_eq!(out.controls, ControlScript::new().at(0, ControlCommand::Continue));
}

#[test]
fn same_inputs_give_identical_artifacts() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let script = ControlScript::new().at(20, ControlCommand::Reorient { slices: SliceSpec::rotated_set(30.0).to_vec() });
    let oa = run(config(&a), script.clone());
    let ob = run(config(&b), script);
    let ma = io::verify_manifest(&oa.output_dir).unwrap();
    let mb = io::verify_manifest(&ob.output_dir).unwrap();
    assert_eq!(ma.files.len(), mb.files.len());
    // only the output path differs, and it shows up in these two files
    let path_bearing = ["config.toml", EVENTS_FILE];
    for (fa, fb) in ma.files.iter().zip(&mb.files) {
        assert_eq!(fa.path, fb.path);
        if !path_bearing.contains(&fa.path.as_str()) {
            assert_eq!(fa.sha256, fb.sha256, "{} differs", fa.path);
        }
    }
    let strip = |e: &Event| {
        let mut e = e.clone();
        e.payload.as_object_mut().unwrap().remove("output_dir");
        e
    };
    assert_eq!(oa.events.iter().map(strip).collect::<Vec<_>>(), ob.events.iter().map(strip).collect::<Vec<_>>());
}

#[test]
fn socket_subscriber_sees_every_event_and_can_stop() {
    let dir = TempDir::new().unwrap();
    let mut c = config(&dir);
    c.emit = Some("127.0.0.1:0".into());
    c.events.pause_on_suggestion = true;
    let session = Session::new(c).unwrap();
    let addr = session.local_addr().unwrap();
    let mut stream = TcpStream::connect(addr).unwrap();
    let handle = thread::spawn(move || session.run().unwrap());

    let mut seen = Vec::new();
    let mut stopped_at = None;
    while let Some(event) = wire::read_event(&mut stream).unwrap() {
        if event.kind == EventKind::StopSuggested && stopped_at.is_none() {
            // the session is paused here until told otherwise
            stopped_at = Some(event.n);
            wire::write_command(&mut stream, &ControlCommand::Stop).unwrap();
        }
        seen.push(event);
    }
    let out = handle.join().unwrap();
    assert_eq!(seen, out.events);
    let n = stopped_at.expect("NC-3 produces a suggestion");
    assert_eq!(out.stop.reason, EndReason::Stopped);
    assert_eq!(out.stop.n_used, n);
    assert_eq!(out.stop.n_acquired, n);
}

#[test]
fn late_subscriber_gets_the_history_and_continue_resumes() {
    let dir = TempDir::new().unwrap();
    let mut c = config(&dir);
    c.emit = Some("127.0.0.1:0".into());
    c.events.pause_on_suggestion = true;
    c.events.slice_data = false;
    let session = Session::new(c).unwrap();
    let addr = session.local_addr().unwrap();
    let handle = thread::spawn(move || session.run().unwrap());

    // the first pause keeps the session alive until we connect
    let mut stream = TcpStream::connect(addr).unwrap();
    let mut seen = Vec::new();
    while let Some(event) = wire::read_event(&mut stream).unwrap() {
        if event.kind == EventKind::StopSuggested {
            wire::write_command(&mut stream, &ControlCommand::Continue).unwrap();
        }
        seen.push(event);
    }
    let out = handle.join().unwrap();
    assert_eq!(seen, out.events);
    assert_eq!(out.stop.reason, EndReason::Exhausted);
    let acks = of_kind(&out.events, EventKind::ControlAck);
    assert!(!acks.is_empty());
    assert!(acks.iter().all(|a| a.payload["status"] == "applied"));
}

#[test]
fn stalled_subscriber_does_not_change_results() {
    let dir = TempDir::new().unwrap();
    let reference = run(config(&dir), ControlScript::new());

    let dir2 = TempDir::new().unwrap();
    let mut c = config(&dir2);
    c.emit = Some("127.0.0.1:0".into());
    c.events.buffer = 1;
    let session = Session::new(c).unwrap();
    // connects and never reads
    let _idle = TcpStream::connect(session.local_addr().unwrap()).unwrap();
    let out = session.run().unwrap();
    assert_eq!(out.trace, reference.trace);
    assert_eq!(out.stop, reference.stop);
    assert_eq!(out.events.len(), reference.events.len());
}

#[test]
fn bad_config_is_rejected_before_running() {
    let mut c = SessionConfig::default();
    c.slices.pop();
    let err = Session::new(c).err().unwrap();
    assert_eq!(err.exit_code(), 2);
    let c = SessionConfig { emit: Some("not an address".into()), ..SessionConfig::default() };
    assert_eq!(Session::new(c).err().unwrap().exit_code(), 2);
}
