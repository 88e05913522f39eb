// Session wire protocol: one JSON message per WebSocket text frame.
// Outbound (server -> console) messages carry a mandatory, strictly
// increasing sequence number; unknown kinds are ignored for forward
// compatibility.

export const ACTION_NAMES = [
  'BEND_UP', 'BEND_DOWN', 'BEND_LEFT', 'BEND_RIGHT', 'ADVANCE', 'WITHDRAW',
] as const;

export const N_ACTIONS = ACTION_NAMES.length;

/** Wall clearance (mm) below which a step counts as a proximity breach. */
export const PROXIMITY_D_MM = 5.0;

export interface StateUpdate {
  episode: number;
  step: number;
  steps_done: number;
  total_steps: number;
  action: number;
  pos: [number, number, number];
  heading: [number, number, number];
  bend_deg: number[];
  s: number;
  segment: string;
  radius_mm: number;
  total_length_mm: number;
  waypoint_index: number;
  waypoints_total: number;
  ray_depths: number[];
  wall_distance: number;
  collided: boolean;
  m: number;
  reward: number;
  ep_reward: number;
  ep_collisions: number;
  terminated: boolean;
  truncated: boolean;
  reached_terminal: boolean;
}

export interface EpisodeEnd {
  episode: number;
  steps: number;
  reward: number;
  collisions: number;
  reached_terminal?: boolean;
}

export type ServerKind =
  | 'state_update'
  | 'intervention_begin'
  | 'intervention_end'
  | 'episode_end'
  | 'heartbeat';

export interface ServerMessage {
  kind: ServerKind;
  seq: number;
  payload: Record<string, unknown>;
}

export interface ClientMessage {
  kind: 'human_action' | 'intervention_begin' | 'intervention_end';
  payload: Record<string, unknown>;
}

const SERVER_KINDS = new Set<string>([
  'state_update', 'intervention_begin', 'intervention_end', 'episode_end',
  'heartbeat',
]);

/** Parse one frame; null for garbage, unknown kinds, or a missing seq. */
export function parseServerMessage(text: string): ServerMessage | null {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof raw !== 'object' || raw === null) return null;
  const msg = raw as { kind?: unknown; seq?: unknown; payload?: unknown };
  if (typeof msg.kind !== 'string' || !SERVER_KINDS.has(msg.kind)) return null;
  if (typeof msg.seq !== 'number' || !Number.isFinite(msg.seq)) return null;
  const payload =
    typeof msg.payload === 'object' && msg.payload !== null
      ? (msg.payload as Record<string, unknown>)
      : {};
  return { kind: msg.kind as ServerKind, seq: msg.seq, payload };
}

export function humanAction(action: number): ClientMessage {
  if (!Number.isInteger(action) || action < 0 || action >= N_ACTIONS) {
    throw new Error(`action index out of range: ${action}`);
  }
  return { kind: 'human_action', payload: { action } };
}

export function interventionBegin(): ClientMessage {
  return { kind: 'intervention_begin', payload: {} };
}

export function interventionEnd(): ClientMessage {
  return { kind: 'intervention_end', payload: {} };
}

export function encode(msg: ClientMessage): string {
  return JSON.stringify(msg);
}
