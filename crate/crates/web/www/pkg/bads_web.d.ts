/* tslint:disable */
/* eslint-disable */

/**
 * A comparison against a simulated previous exam.
 */
export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Records a response to the pending tone; returns the step as JSON.
     */
    answer(heard: boolean): string;
    /**
     * Simulates the previous exam of `old_class` and prepares a listener
     * of `new_class` for the simulate button.
     */
    constructor(old_class: string, new_class: string, seed: bigint);
    /**
     * JSON of the tone to present next; stable until answered.
     */
    nextTone(): string;
    /**
     * Lets the simulated listener answer; returns the step as JSON.
     */
    simulate(): string;
    /**
     * Predictive `p(heard)` of both models over the grid plus the true
     * thresholds, as JSON.
     */
    surface(): string;
    readonly isConcluded: boolean;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_answer: (a: number, b: number) => [number, number, number, number];
    readonly demo_isConcluded: (a: number) => number;
    readonly demo_new: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number];
    readonly demo_nextTone: (a: number) => [number, number, number, number];
    readonly demo_simulate: (a: number) => [number, number, number, number];
    readonly demo_surface: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
