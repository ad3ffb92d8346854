from Spikekal.Cli import main


main()
