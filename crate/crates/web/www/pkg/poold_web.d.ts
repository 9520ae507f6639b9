/* tslint:disable */
/* eslint-disable */

export function fluid_path(lambda: number, buffer: number, horizon: number, step: number): Float64Array;

export function loss_curve(pools: number, buffer: number, beta: number): Float64Array;

export function reflected_path(beta: number, k: number, horizon: number, step: number, seed: number): Float64Array;

/**
 * `phi(beta) / (sqrt(B) Phi(beta))`, or NaN for `B = 0`.
 */
export function scaled_loss_limit(buffer: number, beta: number): number;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly fluid_path: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly loss_curve: (a: number, b: number, c: number) => [number, number, number, number];
    readonly reflected_path: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly scaled_loss_limit: (a: number, b: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
