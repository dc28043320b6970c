from bench_cli import cli_main


def main():
    raise SystemExit(cli_main())


if __name__ == '__main__':
    main()
