/* tslint:disable */
/* eslint-disable */

/**
 * The 18 attribute names as a JSON array.
 */
export function attribute_names(): string;

export function caption_scores(candidate: string, references: string): string;

export function judge_prompt(attribute: string, prediction: string, reference: string): string;

/**
 * "Yes", "No", or "unparseable".
 */
export function judge_verdict(reply: string): string;

export function mask_summary(height: number, width: number, bits: Uint8Array, x_min: number, y_min: number, x_max: number, y_max: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly attribute_names: () => [number, number];
    readonly caption_scores: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly judge_prompt: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly judge_verdict: (a: number, b: number) => [number, number];
    readonly mask_summary: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
