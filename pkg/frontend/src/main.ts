// Browser entry point. The session address comes from the `ws` query
// parameter, e.g. index.html?ws=127.0.0.1:8765, defaulting to the page
// host on port 8765.

import { SessionClient, SocketLike } from './client.js';
import { handleKey } from './input.js';
import { render } from './render.js';
import { initialState } from './state.js';

function browserSocket(url: string): SocketLike {
  const ws = new WebSocket(url);
  const like: SocketLike = {
    get readyState() {
      return ws.readyState;
    },
    send: (data: string) => ws.send(data),
    close: () => ws.close(),
    onopen: null,
    onclose: null,
    onmessage: null,
    onerror: null,
  };
  ws.onopen = () => like.onopen?.();
  ws.onclose = () => like.onclose?.();
  ws.onerror = () => like.onerror?.();
  ws.onmessage = (ev) => like.onmessage?.({ data: ev.data });
  return like;
}

function sessionUrl(): string {
  const params = new URLSearchParams(window.location.search);
  const addr = params.get('ws') ?? `${window.location.hostname || '127.0.0.1'}:8765`;
  return addr.startsWith('ws://') || addr.startsWith('wss://') ? addr : `ws://${addr}/`;
}

function start(): void {
  const canvas = document.getElementById('console') as HTMLCanvasElement;
  const ctx = canvas.getContext('2d');
  if (ctx === null) throw new Error('canvas 2d context unavailable');

  const state = initialState();
  const client = new SessionClient(sessionUrl(), state, browserSocket);
  client.connect();

  window.addEventListener('keydown', (ev) => {
    const msg = handleKey(ev.code, state);
    if (msg !== null) {
      ev.preventDefault();
      client.send(msg);
    }
  });

  const frame = (): void => {
    const dpr = window.devicePixelRatio || 1;
    const w = canvas.clientWidth;
    const h = canvas.clientHeight;
    if (canvas.width !== w * dpr || canvas.height !== h * dpr) {
      canvas.width = w * dpr;
      canvas.height = h * dpr;
      ctx.setTransform(dpr, 0, 0, dpr, 0, 0);
    }
    render(ctx, state, Date.now(), w, h);
    requestAnimationFrame(frame);
  };
  requestAnimationFrame(frame);
}

window.addEventListener('DOMContentLoaded', start);
