//! C interface to the allocation engine.
//!
//! Every fallible function returns an [`MrtaStatus`]; on failure the message
//! is available from [`mrta_last_error`] on the same thread. Handles are
//! opaque and must be released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mrta_core::consensus::{run_allocation, team_distance, RunConfig, RunResult};
use mrta_core::eval::{percent_optimality, BidderSpec};
use mrta_core::oracle::{solve, SolverBudget};
use mrta_core::world::{generate_world, WorldInstance, WorldSpec};
use mrta_core::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MrtaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Checkpoint = 5,
    BufferTooSmall = 6,
    Internal = 7,
}

/// A task allocation problem.
pub struct MrtaWorld(WorldInstance);

/// A bidding policy, classic or learned.
pub struct MrtaBidder(BidderSpec);

/// The outcome of one allocation run.
pub struct MrtaRun {
    result: RunResult,
    distance: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> MrtaStatus {
    match err {
        Error::Io { .. } => MrtaStatus::Io,
        Error::Json(_) | Error::InvalidRecord { .. } => MrtaStatus::Parse,
        Error::Checkpoint { .. } => MrtaStatus::Checkpoint,
        Error::InvalidArgument(_) | Error::Capacity { .. } | Error::DegenerateWorld(_) => MrtaStatus::InvalidArgument,
        _ => MrtaStatus::Internal,
    }
}

struct Failure(MrtaStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MrtaStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MrtaStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MrtaStatus::Internal
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(MrtaStatus::NullPointer, format!("{what} is null"))
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(MrtaStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread, or null after a
/// successful call. Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn mrta_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Samples world `ordinal` of the dataset rooted at `seed` with `n_agents`
/// agents, `min_tasks..=max_tasks` tasks and an unconstrained capacity.
///
/// # Safety
/// `out_world` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mrta_world_generate(
    seed: u64,
    ordinal: u64,
    n_agents: usize,
    min_tasks: usize,
    max_tasks: usize,
    out_world: *mut *mut MrtaWorld,
) -> MrtaStatus {
    guard(|| {
        let slot = out(out_world, "out_world")?;
        if min_tasks > max_tasks {
            return Err(Failure(MrtaStatus::InvalidArgument, format!("min_tasks {min_tasks} exceeds max_tasks {max_tasks}")));
        }
        let spec = WorldSpec { n_agents, task_count: min_tasks..=max_tasks, ..WorldSpec::training() };
        let world = generate_world(seed, ordinal, &spec)?;
        *slot = Box::into_raw(Box::new(MrtaWorld(world)));
        Ok(())
    })
}

/// Parses a world from its JSON form, one line of a dataset file.
///
/// # Safety
/// `json` must be a nul-terminated string and `out_world` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mrta_world_from_json(json: *const c_char, out_world: *mut *mut MrtaWorld) -> MrtaStatus {
    guard(|| {
        let slot = out(out_world, "out_world")?;
        let text = string(json, "json")?;
        let world: WorldInstance = serde_json::from_str(text).map_err(Error::from)?;
        world.validate()?;
        *slot = Box::into_raw(Box::new(MrtaWorld(world)));
        Ok(())
    })
}

/// # Safety
/// `world` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mrta_world_free(world: *mut MrtaWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// # Safety
/// `world` must be a live handle and `out_agents`, `out_tasks` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mrta_world_size(world: *const MrtaWorld, out_agents: *mut usize, out_tasks: *mut usize) -> MrtaStatus {
    guard(|| {
        let w = &get(world, "world")?.0;
        *out(out_agents, "out_agents")? = w.n_agents();
        *out(out_tasks, "out_tasks")? = w.n_tasks();
        Ok(())
    })
}

/// Solves the world to optimality within the default search budget.
/// `out_exact` is set to 1 when optimality was proved.
///
/// # Safety
/// `world` must be a live handle and the output pointers valid.
#[no_mangle]
pub unsafe extern "C" fn mrta_oracle_solve(world: *const MrtaWorld, out_distance: *mut f64, out_exact: *mut u8) -> MrtaStatus {
    guard(|| {
        let w = &get(world, "world")?.0;
        let d = out(out_distance, "out_distance")?;
        let e = out(out_exact, "out_exact")?;
        let best = solve(w, &SolverBudget::default())?;
        *d = best.total_distance;
        *e = u8::from(best.proof_of_optimality);
        Ok(())
    })
}

/// The classic greedy marginal-gain bidder.
///
/// # Safety
/// `out_bidder` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mrta_bidder_classic(out_bidder: *mut *mut MrtaBidder) -> MrtaStatus {
    guard(|| {
        *out(out_bidder, "out_bidder")? = Box::into_raw(Box::new(MrtaBidder(BidderSpec::Classic)));
        Ok(())
    })
}

/// Loads a learned bidder (`"nam"` or `"lstm"`) from a checkpoint manifest.
///
/// # Safety
/// `name` and `checkpoint` must be nul-terminated strings and `out_bidder`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mrta_bidder_load(
    name: *const c_char,
    checkpoint: *const c_char,
    out_bidder: *mut *mut MrtaBidder,
) -> MrtaStatus {
    guard(|| {
        let slot = out(out_bidder, "out_bidder")?;
        let name = string(name, "name")?;
        let path = string(checkpoint, "checkpoint")?;
        let spec = BidderSpec::load(name, Some(Path::new(path)))?;
        *slot = Box::into_raw(Box::new(MrtaBidder(spec)));
        Ok(())
    })
}

/// # Safety
/// `bidder` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mrta_bidder_free(bidder: *mut MrtaBidder) {
    if !bidder.is_null() {
        drop(Box::from_raw(bidder));
    }
}

/// Runs the allocation protocol to convergence or `max_iterations` rounds
/// (0 selects the default limit).
///
/// # Safety
/// `world` and `bidder` must be live handles and `out_run` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mrta_run(
    world: *const MrtaWorld,
    bidder: *const MrtaBidder,
    max_iterations: usize,
    out_run: *mut *mut MrtaRun,
) -> MrtaStatus {
    guard(|| {
        let w = &get(world, "world")?.0;
        let b = &get(bidder, "bidder")?.0;
        let slot = out(out_run, "out_run")?;
        let mut config = RunConfig { record_trajectory: false, ..RunConfig::default() };
        if max_iterations > 0 {
            config.max_iterations = max_iterations;
        }
        let result = run_allocation(w, b.bidder().as_mut(), &config)?;
        let distance = team_distance(&result.states, w);
        *slot = Box::into_raw(Box::new(MrtaRun { result, distance }));
        Ok(())
    })
}

/// # Safety
/// `run` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mrta_run_free(run: *mut MrtaRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Team distance, rounds to convergence and timeout flag of a run.
///
/// # Safety
/// `run` must be a live handle and the output pointers valid.
#[no_mangle]
pub unsafe extern "C" fn mrta_run_summary(
    run: *const MrtaRun,
    out_distance: *mut f64,
    out_iterations: *mut usize,
    out_timed_out: *mut u8,
) -> MrtaStatus {
    guard(|| {
        let r = get(run, "run")?;
        *out(out_distance, "out_distance")? = r.distance;
        *out(out_iterations, "out_iterations")? = r.result.iterations_used;
        *out(out_timed_out, "out_timed_out")? = u8::from(r.result.timed_out);
        Ok(())
    })
}

/// Copies the execution order of `agent`'s tasks into `buf`. `out_len`
/// always receives the route length; when it exceeds `capacity` nothing is
/// copied and `BufferTooSmall` is returned.
///
/// # Safety
/// `run` must be a live handle, `buf` valid for `capacity` writes (or null
/// when `capacity` is 0) and `out_len` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mrta_run_route(
    run: *const MrtaRun,
    agent: usize,
    buf: *mut usize,
    capacity: usize,
    out_len: *mut usize,
) -> MrtaStatus {
    guard(|| {
        let r = get(run, "run")?;
        let len = out(out_len, "out_len")?;
        let state = r
            .result
            .states
            .get(agent)
            .ok_or_else(|| Failure(MrtaStatus::InvalidArgument, format!("agent {agent} out of range")))?;
        let tasks = &state.path.tasks;
        *len = tasks.len();
        if tasks.len() > capacity {
            return Err(Failure(MrtaStatus::BufferTooSmall, format!("route has {} tasks, buffer holds {capacity}", tasks.len())));
        }
        if !tasks.is_empty() {
            if buf.is_null() {
                return Err(null("buf"));
            }
            ptr::copy_nonoverlapping(tasks.as_ptr(), buf, tasks.len());
        }
        Ok(())
    })
}

/// Percent optimality `100 * d_star / d_hat`.
///
/// # Safety
/// `out_eta` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mrta_percent_optimality(d_star: f64, d_hat: f64, out_eta: *mut f64) -> MrtaStatus {
    guard(|| {
        let slot = out(out_eta, "out_eta")?;
        *slot = percent_optimality(d_star, d_hat)?;
        Ok(())
    })
}
