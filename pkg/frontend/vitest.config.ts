import { defineConfig } from 'vitest/config';

export default defineConfig({
  test: {
    include: ['test/**/*.test.ts'],
    // The integration test measures wall-clock per-step cost of a live
    // training session; keep files sequential so timings stay clean.
    fileParallelism: false,
    testTimeout: 15_000,
  },
});
