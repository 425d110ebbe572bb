/** Thin fetch wrappers for the annotation service endpoints. */

import type { JudgmentPayload, TaskPayload } from "./types.js";

export interface SubmitResult {
  ok: boolean;
  status: number;
  problems?: Record<string, string>;
}

export async function fetchTask(workerId: string): Promise<TaskPayload | null> {
  const response = await fetch(`/task?worker=${encodeURIComponent(workerId)}`);
  if (!response.ok) {
    throw new Error(`task fetch failed: ${response.status}`);
  }
  const body = (await response.json()) as { task: TaskPayload | null };
  return body.task;
}

export async function submitJudgment(payload: JudgmentPayload): Promise<SubmitResult> {
  const response = await fetch("/judgment", {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(payload),
  });
  if (response.ok) {
    return { ok: true, status: response.status };
  }
  let problems: Record<string, string> | undefined;
  try {
    const body = (await response.json()) as { detail?: Record<string, string> };
    problems = body.detail;
  } catch {
    problems = undefined;
  }
  return { ok: false, status: response.status, problems };
}
