import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "node",
    include: ["tests/**/*.test.ts"],
    // The integration test generates a phantom study, boots the real
    // segmentation service, and waits for a job; generous caps keep it
    // reliable on a loaded single-core box.
    testTimeout: 600_000,
    hookTimeout: 600_000,
  },
});
