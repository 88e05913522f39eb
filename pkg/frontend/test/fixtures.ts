// Shared builders for protocol fixtures used across the component tests.

import { ServerMessage, StateUpdate } from '../src/protocol.js';

export function update(over: Partial<StateUpdate> = {}): StateUpdate {
  return {
    episode: 0,
    step: 0,
    steps_done: 1,
    total_steps: 1000,
    action: 4,
    pos: [0, 0, 2],
    heading: [0, 0, 1],
    bend_deg: [0, 0],
    s: 2,
    segment: 'Rectum',
    radius_mm: 20,
    total_length_mm: 100,
    waypoint_index: 0,
    waypoints_total: 4,
    ray_depths: [28, 30, 32, 34, 32, 30, 28],
    wall_distance: 20,
    collided: false,
    m: 0,
    reward: 0.1,
    ep_reward: 0.1,
    ep_collisions: 0,
    terminated: false,
    truncated: false,
    reached_terminal: false,
    ...over,
  };
}

export function stateMsg(
  seq: number,
  over: Partial<StateUpdate> = {},
): ServerMessage {
  return {
    kind: 'state_update',
    seq,
    payload: update(over) as unknown as Record<string, unknown>,
  };
}

export function eventMsg(
  kind: 'intervention_begin' | 'intervention_end' | 'heartbeat',
  seq: number,
  payload: Record<string, unknown> = {},
): ServerMessage {
  return { kind, seq, payload };
}

export function episodeEndMsg(
  seq: number,
  payload: Record<string, unknown>,
): ServerMessage {
  return { kind: 'episode_end', seq, payload };
}
