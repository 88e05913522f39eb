// Canvas drawing for the operator console. Everything renders from the
// reduced ConsoleState, so whatever frame won the sequence race is what
// appears. The context is typed structurally so tests can pass a
// recording stub instead of a real canvas.

import { PROXIMITY_D_MM, StateUpdate } from './protocol.js';
import {
  ConsoleState,
  decimateTrail,
  isStale,
  runningAte,
  runningSecurity,
} from './state.js';

export const COLOR_CLEAN = '#2ecc71';
export const COLOR_PROXIMITY = '#f0a825';
export const COLOR_COLLISION = '#e0402e';

const COLOR_BG = '#10141a';
const COLOR_WALL = '#5a6b80';
const COLOR_CENTER = '#2c3947';
const COLOR_TRAIL = '#6fb7ff';
const COLOR_TEXT = '#d5dde8';
const COLOR_BANNER = '#c2342244';
const COLOR_STALE = '#f0a825';

/** The subset of CanvasRenderingContext2D the console draws with. */
export interface Ctx {
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  font: string;
  globalAlpha: number;
  clearRect(x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  stroke(): void;
  fill(): void;
  fillText(text: string, x: number, y: number): void;
  save(): void;
  restore(): void;
}

/** Tip marker color: collision beats proximity beats clean. */
export function tipColor(update: StateUpdate): string {
  if (update.collided) return COLOR_COLLISION;
  if (update.wall_distance < PROXIMITY_D_MM) return COLOR_PROXIMITY;
  return COLOR_CLEAN;
}

interface Layout {
  x: number;
  y: number;
  w: number;
  h: number;
}

function tubeView(ctx: Ctx, state: ConsoleState, box: Layout): void {
  const u = state.latest as StateUpdate;
  const midY = box.y + box.h / 2;
  const half = box.h / 2 - 6;
  const sToX = (s: number) =>
    box.x + (Math.min(s, u.total_length_mm) / u.total_length_mm) * box.w;

  ctx.strokeStyle = COLOR_CENTER;
  ctx.lineWidth = 1;
  ctx.beginPath();
  ctx.moveTo(box.x, midY);
  ctx.lineTo(box.x + box.w, midY);
  ctx.stroke();

  ctx.strokeStyle = COLOR_WALL;
  ctx.beginPath();
  ctx.moveTo(box.x, midY - half);
  ctx.lineTo(box.x + box.w, midY - half);
  ctx.moveTo(box.x, midY + half);
  ctx.lineTo(box.x + box.w, midY + half);
  ctx.stroke();

  const points = decimateTrail(state.trail);
  if (points.length > 1) {
    ctx.strokeStyle = COLOR_TRAIL;
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    points.forEach((p, i) => {
      const y = midY - Math.min(1, p.offset / p.radius) * half;
      if (i === 0) ctx.moveTo(sToX(p.s), y);
      else ctx.lineTo(sToX(p.s), y);
    });
    ctx.stroke();
  }

  const tipOffset = Math.max(0, u.radius_mm - u.wall_distance);
  const tipY = midY - Math.min(1, tipOffset / u.radius_mm) * half;
  ctx.fillStyle = tipColor(u);
  ctx.beginPath();
  ctx.arc(sToX(u.s), tipY, 5, 0, Math.PI * 2);
  ctx.fill();
}

function rayFan(ctx: Ctx, u: StateUpdate, box: Layout): void {
  const n = u.ray_depths.length;
  if (n === 0) return;
  const cx = box.x + box.w / 2;
  const cy = box.y + box.h - 4;
  const scale = (box.h - 8) / Math.max(...u.ray_depths, 1e-9);
  ctx.strokeStyle = COLOR_TRAIL;
  ctx.lineWidth = 1;
  ctx.beginPath();
  for (let i = 0; i < n; i += 1) {
    const angle = n === 1 ? 0 : -Math.PI / 3 + ((2 * Math.PI) / 3) * (i / (n - 1));
    const r = u.ray_depths[i] * scale;
    ctx.moveTo(cx, cy);
    ctx.lineTo(cx + Math.sin(angle) * r, cy - Math.cos(angle) * r);
  }
  ctx.stroke();
}

function bendGauge(ctx: Ctx, u: StateUpdate, box: Layout): void {
  const axes = u.bend_deg.slice(0, 2);
  const barH = box.h / Math.max(axes.length, 1);
  axes.forEach((deg, i) => {
    const y = box.y + i * barH + 2;
    const mid = box.x + box.w / 2;
    ctx.strokeStyle = COLOR_WALL;
    ctx.lineWidth = 1;
    ctx.strokeRect(box.x, y, box.w, barH - 4);
    const frac = Math.max(-1, Math.min(1, deg / 90));
    ctx.fillStyle = COLOR_TRAIL;
    if (frac >= 0) ctx.fillRect(mid, y + 1, (box.w / 2) * frac, barH - 6);
    else ctx.fillRect(mid + (box.w / 2) * frac, y + 1, -(box.w / 2) * frac, barH - 6);
  });
}

function hud(ctx: Ctx, state: ConsoleState, box: Layout): void {
  const u = state.latest as StateUpdate;
  ctx.fillStyle = COLOR_TEXT;
  ctx.font = '12px monospace';
  const lines = [
    `${u.segment}  ep ${u.episode}  step ${u.step}`,
    `progress ${u.steps_done}/${u.total_steps}  waypoint ${u.waypoint_index}/${u.waypoints_total}`,
    `wall ${u.wall_distance.toFixed(1)} mm  reward ${u.ep_reward.toFixed(2)}`,
    `security ${runningSecurity(state).toFixed(3)}  centerline err ${runningAte(state).toFixed(2)} mm`,
  ];
  lines.forEach((line, i) => ctx.fillText(line, box.x, box.y + 14 + i * 16));
}

/** Draw one frame of the console onto `ctx`. */
export function render(
  ctx: Ctx,
  state: ConsoleState,
  now: number,
  width: number,
  height: number,
): void {
  ctx.save();
  ctx.fillStyle = COLOR_BG;
  ctx.fillRect(0, 0, width, height);

  if (state.latest === null) {
    ctx.fillStyle = COLOR_TEXT;
    ctx.font = '14px monospace';
    const label =
      state.connection === 'open' ? 'waiting for session...' : `socket ${state.connection}`;
    ctx.fillText(label, 16, height / 2);
    ctx.restore();
    return;
  }

  tubeView(ctx, state, { x: 16, y: 72, w: width - 32, h: height - 160 });
  rayFan(ctx, state.latest, { x: width - 140, y: height - 80, w: 124, h: 72 });
  bendGauge(ctx, state.latest, { x: 16, y: height - 72, w: 120, h: 56 });
  hud(ctx, state, { x: 16, y: 0, w: width - 32, h: 64 });

  if (state.intervening) {
    ctx.fillStyle = COLOR_BANNER;
    ctx.fillRect(0, 0, width, 26);
    ctx.fillStyle = COLOR_TEXT;
    ctx.font = 'bold 13px monospace';
    ctx.fillText('INTERVENTION ACTIVE', width / 2 - 80, 17);
  } else if (state.armed) {
    ctx.fillStyle = COLOR_TEXT;
    ctx.font = 'bold 13px monospace';
    ctx.fillText('ARMED (keys live)', width / 2 - 70, 17);
  }

  if (state.banner !== null) {
    const b = state.banner;
    ctx.fillStyle = COLOR_TEXT;
    ctx.font = 'bold 13px monospace';
    ctx.fillText(
      `episode ${b.episode} done: ${b.steps} steps, reward ${b.reward.toFixed(2)}, ` +
        `${b.collisions} collisions`,
      16,
      height - 88,
    );
  }

  if (isStale(state, now)) {
    ctx.fillStyle = COLOR_STALE;
    ctx.font = 'bold 12px monospace';
    ctx.fillText('STALE FEED', width - 96, 17);
  }
  if (state.connection !== 'open') {
    ctx.fillStyle = COLOR_COLLISION;
    ctx.font = 'bold 12px monospace';
    ctx.fillText(`socket ${state.connection}`, width - 150, height - 10);
  }
  ctx.restore();
}
