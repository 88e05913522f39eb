// Keyboard reducer. Space arms/disarms intervention mode (sending the
// matching begin/end message); while armed, the arrow keys steer the bend
// and A/W drive insertion. Keys outside intervention mode never produce
// action messages, so a stray keypress cannot inject a command the
// operator did not arm. The armed toggle is local key state; the
// INTERVENTION banner instead follows server acknowledgments, which only
// arrive once a sent action actually executes.

import { ClientMessage, humanAction, interventionBegin, interventionEnd } from './protocol.js';
import { ConsoleState } from './state.js';

const ACTION_KEYS: Record<string, number> = {
  ArrowUp: 0,
  ArrowDown: 1,
  ArrowLeft: 2,
  ArrowRight: 3,
  KeyA: 4,
  KeyW: 5,
};

/**
 * Apply one key press: flips the local armed toggle on Space and returns
 * the message to send, or null when the key is unbound, gated off, or the
 * socket is not open (disconnected input is discarded).
 */
export function handleKey(
  code: string,
  state: ConsoleState,
): ClientMessage | null {
  if (state.connection !== 'open') return null;
  if (code === 'Space') {
    state.armed = !state.armed;
    return state.armed ? interventionBegin() : interventionEnd();
  }
  const action = ACTION_KEYS[code];
  if (action === undefined) return null;
  if (!state.armed) return null;
  return humanAction(action);
}

export function boundKeys(): string[] {
  return ['Space', ...Object.keys(ACTION_KEYS)];
}
