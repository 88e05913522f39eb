// Console state and the single reducer both socket and key events flow
// through. Rendering must always reflect the highest sequence number
// received: stale frames are counted and dropped, never applied.

import { PROXIMITY_D_MM, ServerMessage, StateUpdate } from './protocol.js';

/** No traffic for this long means the view is stale. */
export const STALE_MS = 2000;

export type Connection = 'connecting' | 'open' | 'closed';

export interface TrailPoint {
  s: number;
  /** Distance from the local centerline (radius minus wall clearance). */
  offset: number;
  radius: number;
  collided: boolean;
}

export interface EpisodeBanner {
  episode: number;
  steps: number;
  reward: number;
  collisions: number;
}

export interface ConsoleState {
  connection: Connection;
  lastSeq: number;
  droppedStale: number;
  latest: StateUpdate | null;
  /** Mirrors server intervention events, never the local key state. */
  intervening: boolean;
  /** Local Space toggle arming the action keys; what Space flips. */
  armed: boolean;
  banner: EpisodeBanner | null;
  trail: TrailPoint[];
  stepsSeen: number;
  proximitySteps: number;
  collisionSteps: number;
  offsetSum: number;
  lastMessageAt: number;
}

export function initialState(): ConsoleState {
  return {
    connection: 'connecting',
    lastSeq: 0,
    droppedStale: 0,
    latest: null,
    intervening: false,
    armed: false,
    banner: null,
    trail: [],
    stepsSeen: 0,
    proximitySteps: 0,
    collisionSteps: 0,
    offsetSum: 0,
    lastMessageAt: 0,
  };
}

function applyStateUpdate(state: ConsoleState, update: StateUpdate): void {
  if (state.latest !== null && update.episode !== state.latest.episode) {
    state.trail = [];
    state.stepsSeen = 0;
    state.proximitySteps = 0;
    state.collisionSteps = 0;
    state.offsetSum = 0;
  }
  if (state.banner !== null && update.episode > state.banner.episode) {
    state.banner = null;
  }
  state.latest = update;
  const offset = Math.max(0, update.radius_mm - update.wall_distance);
  state.trail.push({
    s: update.s,
    offset,
    radius: update.radius_mm,
    collided: update.collided,
  });
  state.stepsSeen += 1;
  state.offsetSum += offset;
  if (update.wall_distance < PROXIMITY_D_MM) state.proximitySteps += 1;
  if (update.collided) state.collisionSteps += 1;
}

/** Apply one server message; returns the same mutated state for chaining. */
export function reduce(
  state: ConsoleState,
  msg: ServerMessage,
  now: number,
): ConsoleState {
  if (msg.seq <= state.lastSeq) {
    state.droppedStale += 1;
    return state;
  }
  state.lastSeq = msg.seq;
  state.lastMessageAt = now;
  switch (msg.kind) {
    case 'state_update':
      applyStateUpdate(state, msg.payload as unknown as StateUpdate);
      break;
    case 'intervention_begin':
      state.intervening = true;
      break;
    case 'intervention_end':
      state.intervening = false;
      break;
    case 'episode_end': {
      const p = msg.payload as Record<string, number>;
      state.banner = {
        episode: p.episode ?? -1,
        steps: p.steps ?? 0,
        reward: p.reward ?? 0,
        collisions: p.collisions ?? 0,
      };
      break;
    }
    case 'heartbeat':
      break;
  }
  return state;
}

export function setConnection(state: ConsoleState, c: Connection): void {
  state.connection = c;
  if (c !== 'open') {
    state.intervening = false;
    state.armed = false;
  }
}

export function isStale(state: ConsoleState, now: number): boolean {
  return state.lastMessageAt > 0 && now - state.lastMessageAt > STALE_MS;
}

/** Running safety score over the steps seen this episode (1 is spotless). */
export function runningSecurity(state: ConsoleState): number {
  const n = state.stepsSeen;
  if (n === 0) return 1;
  return 1 - (0.3 * state.proximitySteps) / n - (0.7 * state.collisionSteps) / n;
}

/** Running mean distance from the centerline (mm) this episode. */
export function runningAte(state: ConsoleState): number {
  return state.stepsSeen === 0 ? 0 : state.offsetSum / state.stepsSeen;
}

/**
 * Thin an old trail for drawing: the newest `fullRes` points stay at full
 * resolution, older history is strided down to at most `fullRes` more
 * points, preserving order.
 */
export function decimateTrail(
  trail: TrailPoint[],
  fullRes = 200,
): TrailPoint[] {
  if (trail.length <= fullRes) return trail.slice();
  const older = trail.slice(0, trail.length - fullRes);
  const newest = trail.slice(trail.length - fullRes);
  const stride = Math.ceil(older.length / fullRes);
  const thinned: TrailPoint[] = [];
  for (let i = 0; i < older.length; i += stride) thinned.push(older[i]);
  return thinned.concat(newest);
}
