// End-to-end round trip against a real serve-mode training session:
// connect with the actual client/protocol/input stack, arm intervention,
// send 20 step-locked actions, and verify the server-side episode logs
// recorded exactly those actions on m=1 steps. A second, client-free run
// of the same config bounds the per-step wall-clock cost the console adds.

import { spawn } from 'node:child_process';
import { mkdtempSync, readFileSync, readdirSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';
import { WebSocket } from 'ws';
import { describe, expect, it } from 'vitest';

import { SessionClient, SocketLike } from '../src/client.js';
import { handleKey } from '../src/input.js';
import { ConsoleState, initialState } from '../src/state.js';

const ACTION_CODES = ['ArrowUp', 'ArrowDown', 'ArrowLeft', 'ArrowRight', 'KeyA', 'KeyW'];
const N_ACTIONS_SENT = 20;

const SESSION_CONFIG = {
  algorithm: 'hi-ppo',
  intervention_source: 'remote',
  segments: ['Rectum'],
  seed: 7,
  total_steps: 4096,
  buffer_size: 512,
  hidden_size: 24,
  hi: { human_hold_steps: 1 },
  env: { max_episode_steps: 2000 },
};

function nodeSocket(url: string): SocketLike {
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
  ws.on('open', () => like.onopen?.());
  ws.on('close', () => like.onclose?.());
  ws.on('error', () => like.onerror?.());
  ws.on('message', (data, isBinary) => {
    if (!isBinary) like.onmessage?.({ data: data.toString() });
  });
  return like;
}

function delay(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

async function until(
  cond: () => boolean,
  timeoutMs: number,
  what: string,
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (!cond()) {
    if (Date.now() > deadline) throw new Error(`timed out waiting for ${what}`);
    await delay(10);
  }
}

interface ServeRun {
  stats: { wall_time_s: number; steps_done: number };
  logsDir: string;
}

/** Spawn `colonav serve`, optionally drive it, and wait for completion. */
async function runServe(
  cfgPath: string,
  outDir: string,
  interact: ((url: string) => Promise<void>) | null,
): Promise<ServeRun> {
  const proc = spawn(
    'python3',
    ['-u', '-m', 'colonav', 'serve', '--config', cfgPath, '--listen', '127.0.0.1:0', '--out', outDir],
    { stdio: ['ignore', 'pipe', 'pipe'] },
  );
  let stdout = '';
  let stderr = '';
  proc.stdout.on('data', (d) => {
    stdout += d.toString();
  });
  proc.stderr.on('data', (d) => {
    stderr += d.toString();
  });
  const exited = new Promise<number>((resolve) => {
    proc.on('close', (code) => resolve(code ?? -1));
  });
  try {
    await until(() => /ws:\/\/127\.0\.0\.1:\d+\//.test(stdout), 60_000, 'listen line');
    const url = (stdout.match(/ws:\/\/127\.0\.0\.1:\d+\//) as RegExpMatchArray)[0];
    if (interact !== null) await interact(url);
  } catch (err) {
    proc.kill();
    await exited;
    throw new Error(`${err}\nserver stderr:\n${stderr}`);
  }
  const code = await exited;
  expect(code, `serve exited ${code}; stderr:\n${stderr}`).toBe(0);
  const stats = JSON.parse(readFileSync(join(outDir, 'run_stats.json'), 'utf8'));
  return { stats, logsDir: join(outDir, 'logs') };
}

interface LoggedStep {
  i: number;
  action: number;
  m: number;
}

function readLoggedSteps(logsDir: string): LoggedStep[][] {
  const files = readdirSync(logsDir)
    .filter((f) => f.startsWith('ep_') && f.endsWith('.jsonl'))
    .sort();
  return files.map((f) =>
    readFileSync(join(logsDir, f), 'utf8')
      .trim()
      .split('\n')
      .map((line) => JSON.parse(line))
      .filter((rec) => rec.kind === 'step'),
  );
}

describe('console round trip against a live session', () => {
  it(
    'delivers 20 actions, logs them on m=1 steps, and stays off the hot path',
    async () => {
      const tmp = mkdtempSync(join(tmpdir(), 'console-it-'));
      const cfgPath = join(tmp, 'session.json');
      writeFileSync(cfgPath, JSON.stringify(SESSION_CONFIG, null, 2));

      // Reference run: identical config, no console attached.
      const baseline = await runServe(cfgPath, join(tmp, 'baseline'), null);
      expect(baseline.stats.steps_done).toBe(SESSION_CONFIG.total_steps);

      const sent: number[] = [];
      const treated = await runServe(cfgPath, join(tmp, 'console'), async (url) => {
        const state: ConsoleState = initialState();
        let prevIntervening = false;
        let completedTakeovers = 0;
        const client = new SessionClient(url, state, nodeSocket, (s) => {
          if (s.intervening !== prevIntervening) {
            if (!s.intervening) completedTakeovers += 1;
            prevIntervening = s.intervening;
          }
        });
        client.connect();
        await until(() => state.connection === 'open', 15_000, 'socket open');
        await until(() => state.latest !== null, 15_000, 'first state_update');

        const begin = handleKey('Space', state);
        expect(begin?.kind).toBe('intervention_begin');
        expect(client.send(begin!)).toBe(true);

        for (let k = 0; k < N_ACTIONS_SENT; k += 1) {
          const action = k % ACTION_CODES.length;
          const msg = handleKey(ACTION_CODES[action], state);
          expect(msg?.kind).toBe('human_action');
          expect(client.send(msg!)).toBe(true);
          sent.push(action);
          // Step-lock: wait for this takeover's end ack before the next
          // send, so a fresh command can never overwrite an unconsumed one.
          await until(() => completedTakeovers > k, 20_000, `takeover ${k} end ack`);
        }

        const end = handleKey('Space', state);
        expect(end?.kind).toBe('intervention_end');
        expect(client.send(end!)).toBe(true);
        await delay(100); // let the final frame flush before detaching
        client.close();
      });
      expect(treated.stats.steps_done).toBe(SESSION_CONFIG.total_steps);

      // Round trip: the m=1 rows across the episode logs are exactly the
      // sent actions, in order, each an isolated single-step span.
      const episodes = readLoggedSteps(treated.logsDir);
      const executed: number[] = [];
      for (const steps of episodes) {
        steps.forEach((rec, idx) => {
          if (rec.m === 1) {
            executed.push(rec.action);
            const next = steps[idx + 1];
            if (next !== undefined) expect(next.m).toBe(0);
          }
        });
      }
      expect(executed).toEqual(sent);

      // Non-blocking contract: attaching and driving the console must not
      // slow the training loop measurably.
      const perStepBaselineMs =
        (1000 * baseline.stats.wall_time_s) / baseline.stats.steps_done;
      const perStepTreatedMs =
        (1000 * treated.stats.wall_time_s) / treated.stats.steps_done;
      expect(perStepTreatedMs - perStepBaselineMs).toBeLessThan(5.0);

      // The baseline run, with no console attached, logged no takeovers.
      const baselineSteps = readLoggedSteps(baseline.logsDir);
      expect(baselineSteps.flat().every((rec) => rec.m === 0)).toBe(true);
    },
    300_000,
  );
});
