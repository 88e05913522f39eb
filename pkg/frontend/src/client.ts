// WebSocket wiring between the training session and the console state.
// Reconnects with a fixed backoff so a restarted trainer picks the
// console back up without a page reload.

import { ClientMessage, encode, parseServerMessage } from './protocol.js';
import { Connection, ConsoleState, reduce, setConnection } from './state.js';

const RECONNECT_MS = 1000;

/** Structural view of a WebSocket so tests can substitute a stub. */
export interface SocketLike {
  readyState: number;
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export class SessionClient {
  private socket: SocketLike | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private closed = false;

  constructor(
    private readonly url: string,
    private readonly state: ConsoleState,
    private readonly makeSocket: SocketFactory,
    private readonly onChange: (state: ConsoleState) => void = () => {},
    private readonly now: () => number = Date.now,
  ) {}

  connect(): void {
    this.closed = false;
    this.open();
  }

  private open(): void {
    this.transition('connecting');
    const socket = this.makeSocket(this.url);
    this.socket = socket;
    socket.onopen = () => this.transition('open');
    socket.onclose = () => {
      this.socket = null;
      this.transition('closed');
      if (!this.closed) {
        this.timer = setTimeout(() => this.open(), RECONNECT_MS);
      }
    };
    socket.onerror = () => {};
    socket.onmessage = (ev) => {
      if (typeof ev.data !== 'string') return;
      const msg = parseServerMessage(ev.data);
      if (msg === null) return;
      reduce(this.state, msg, this.now());
      this.onChange(this.state);
    };
  }

  private transition(c: Connection): void {
    setConnection(this.state, c);
    this.onChange(this.state);
  }

  /** Send a client message; drops silently when the socket is not open. */
  send(msg: ClientMessage): boolean {
    if (this.socket === null || this.socket.readyState !== 1) return false;
    this.socket.send(encode(msg));
    return true;
  }

  close(): void {
    this.closed = true;
    if (this.timer !== null) clearTimeout(this.timer);
    this.socket?.close();
  }
}
